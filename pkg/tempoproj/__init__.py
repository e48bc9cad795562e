__version__ = '0.1.0'

from .dataset import TimeSeries, Dataset, load_dataset, load_ucr, load_multivariate, synth_generate, znormalize
from .metrics import MetricKind, euclidean, dtw, sbd, cross_correlate
from .projection import PivotSet, ProjectionMatrix, select_pivots, gen_proj_space, normalize_projection
from .evaluation import PipelineConfig, run_pipeline, benchmark, clustering_accuracy
