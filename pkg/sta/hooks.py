app_name = "sta"
app_title = "STA"
app_publisher = "Apstic"
app_description = "Speech-conditioned image generation over VQ tokens."
app_email = "nites0262@gmail.com"
app_license = "mit"

# Staged training. Each stage is trained against frozen copies of the stages it depends on.
# `sections` are the config sections whose values the stage checkpoint digest covers.
train_stages = {
    "vqvae": {
        "trainer": "sta.vq.codec.train_vqvae",
        "builder": "sta.vq.codec.build_codec",
        "depends_on": [],
        "sections": ["data", "vqvae"],
    },
    "encoder": {
        "trainer": "sta.encoder.training.train_encoder",
        "builder": "sta.encoder.speech.build_encoder",
        "depends_on": [],
        "sections": ["data", "encoder"],
    },
    "diffusion": {
        "trainer": "sta.denoiser.training.train_denoiser",
        "builder": "sta.denoiser.model.build_denoiser",
        "depends_on": ["vqvae", "encoder"],
        "sections": ["data", "vqvae", "encoder", "diffusion", "denoiser"],
    },
    "evaluator": {
        "trainer": "sta.metrics.extractor.train_evaluator",
        "builder": "sta.metrics.extractor.build_evaluator",
        "depends_on": [],
        "sections": ["data", "evaluator"],
    },
}

# CLI verb -> api function
commands = {
    "gen-data": "sta.pipeline.api.cmd_gen_data",
    "train": "sta.pipeline.api.cmd_train",
    "sample": "sta.pipeline.api.cmd_sample",
    "evaluate": "sta.pipeline.api.cmd_evaluate",
    "retrieval-eval": "sta.pipeline.api.cmd_retrieval_eval",
}

# Scene attribute vocabulary shared by renderer, captions, teacher and evaluator
SCENE_SHAPES = ["circle", "square", "triangle"]
SCENE_COLORS = ["red", "green", "blue", "yellow"]
SCENE_SIZES = ["small", "large"]
SCENE_POSITIONS = list(range(9))  # 3x3 cells, row-major

# Registered caption languages. Vocabularies are disjoint and each language
# has its own symbol order. Positions are spoken as a row word and a column word.
CAPTION_LANGUAGES = {
    "A": {
        "order": ["size", "color", "shape", "row", "col"],
        "shape": {"circle": "circle", "square": "square", "triangle": "triangle"},
        "color": {"red": "red", "green": "green", "blue": "blue", "yellow": "yellow"},
        "size": {"small": "small", "large": "large"},
        "row": ["top", "middle", "bottom"],
        "col": ["left", "center", "right"],
    },
    "B": {
        "order": ["shape", "size", "color", "col", "row"],
        "shape": {"circle": "daira", "square": "murabba", "triangle": "muthallath"},
        "color": {"red": "ahmar", "green": "akhdar", "blue": "azraq", "yellow": "asfar"},
        "size": {"small": "saghir", "large": "kabir"},
        "row": ["aala", "wasat", "asfal"],
        "col": ["yasar", "markaz", "yamin"],
    },
}
