"""export: write a task split in the line-delimited corpus format."""
from tasks.synthetic import export_corpus
from utils.config import RunConfig


def run(config: RunConfig) -> int:
    export_corpus(config.task_spec(), config.task.corpus_split, config.task.corpus_size, config.paths.corpus_out)
    return 0
