from src.bench.config import build_model, load_experiment_config, model_from_config
from src.bench.harness import run_meeting_benchmark, run_meeting_benchmark_async
from src.bench.oracles import discrete_model_oracle, kalman_smoother, uniform_meeting_cdf
