from sta.diffusion.process import (
	diffusion_training_loss,
	forward_marginal,
	forward_sample,
	model_reverse,
	model_reverse_log,
	posterior,
	sample,
)
from sta.diffusion.schedule import ScheduleSpec, TransitionSchedule, build_schedule, schedule_from_config
