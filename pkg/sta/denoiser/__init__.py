from sta.denoiser.model import AdaLN, Denoiser, adaln, denoise_logits
