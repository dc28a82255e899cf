from sta.data.captions import synthesize_caption
from sta.data.corpus import CorpusManifest, CorpusRecord, generate_corpus, load_manifest
from sta.data.scenes import SceneSpec, all_scenes, render
