from sta.encoder.contrastive import contrastive_loss
from sta.encoder.speech import SpeechEncoder, embed_caption, embed_captions
from sta.encoder.teacher import TeacherEmbedder, embed_image_teacher
