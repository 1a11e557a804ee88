"""count-params: closed-form trainable-parameter counts for the configured run."""
from models.model import itemize_params
from tasks.synthetic import RULE_CLASSES, LabelRule
from utils.config import RunConfig
from utils.errors import ConfigError


def run(config: RunConfig) -> int:
    try:
        num_classes = RULE_CLASSES[LabelRule(config.task.name)]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    mode = config.trainer.mode
    a = config.adapter
    counts = itemize_params(
        config.backbone,
        num_classes,
        mode=mode,
        num_heads=a.num_heads if mode == 'adapter_tune' else None,
        head_dim=a.head_dim,
        with_biases=a.with_biases,
    )

    b = config.backbone
    print(f'\nTrainable parameters ({mode}, L={b.num_layers} H={b.hidden} M={a.num_heads} D={a.head_dim}, '
          f"biases={'on' if a.with_biases else 'off'})")
    print('=' * 50)
    for key in ('adapter', 'decoder', 'backbone', 'total', 'backbone_total'):
        print(f'  {key:16} {counts[key]:>16,}')
    print(f"  {'adapter %':16} {counts['adapter_percent_of_backbone']:>15.4f}%")
    print(f"  {'total %':16} {counts['percent_of_backbone']:>15.4f}%")
    print('=' * 50)
    return 0
