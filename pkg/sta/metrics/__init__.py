from sta.metrics.scores import (
	FeatureStats,
	RetrievalIndex,
	feature_stats,
	fid,
	inception_score,
	inception_score_splits,
	recall_at_k,
)
