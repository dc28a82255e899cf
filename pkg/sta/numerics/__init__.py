from sta.numerics.gradcheck import finite_difference_check
from sta.numerics.optim import AdamW, OptimizerState, adamw_step, warmup_lr
from sta.numerics.tensor import (
	Parameter,
	Tensor,
	cross_entropy,
	layer_norm,
	matmul,
	no_grad,
	softmax,
)
