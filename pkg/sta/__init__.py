__version__ = "0.0.1"


class STAError(Exception):
	"""Base class for every error raised by this package"""


class ValidationError(STAError):
	pass


class DoesNotExistError(STAError):
	pass


class DependencyError(STAError):
	"""A stage or artifact required by the current step is missing"""


class ChecksumError(STAError):
	"""Config digest or magic bytes do not match"""


class NumericalError(STAError):
	"""NaN / inf reached a place where finite values are required"""

