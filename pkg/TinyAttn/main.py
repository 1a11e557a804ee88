import argparse
import sys

from runner import COMMAND_ROUTES, run
from utils.config import load_config
from utils.errors import CheckpointError, ConfigError, NumericError
from utils.logger import setup_logger

logger = setup_logger()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog='tinyattn',
        description='Tiny-attention adapters on a toy pretrained transformer',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s pretrain --config configs/pretrain.json
  %(prog)s adapt --config configs/adapt_match_pair.json --set trainer.seed=1
  %(prog)s merge --set paths.checkpoint_in=runs/4head.ckpt --set paths.checkpoint_out=runs/merged.ckpt
  %(prog)s count-params --roberta-large --set adapter.with_biases=false
        """
    )
    parser.add_argument('command', nargs='?', choices=sorted(COMMAND_ROUTES), help='Command to run')
    parser.add_argument('-c', '--config', type=str, help='JSON config file')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config key (repeatable); the value is parsed as JSON when possible')
    parser.add_argument('--roberta-large', action='store_true',
                        help='Use the roberta-large backbone shape (H=1024, L=24, A=16)')
    parser.add_argument('--list', action='store_true', help='List commands and exit')

    args = parser.parse_args(argv)

    if args.list:
        print('\nCommands:')
        print('=' * 50)
        for name, (_, _, summary) in COMMAND_ROUTES.items():
            print(f'  {name:13} {summary}')
        print('=' * 50)
        return EXIT_OK

    if not args.command:
        parser.error('the following arguments are required: command (unless using --list)')

    overrides = list(args.overrides)
    if args.roberta_large:
        overrides.insert(0, 'backbone.preset=roberta-large')

    try:
        config = load_config(args.config, overrides, command=args.command)
        return run(config)
    except ConfigError as e:
        logger.error(f'Configuration error: {e}')
        return EXIT_CONFIG
    except NumericError as e:
        logger.error(f'Numeric failure: {e}')
        return EXIT_NUMERIC
    except CheckpointError as e:
        logger.error(f'Checkpoint error: {e}')
        return EXIT_IO
    except OSError as e:
        logger.error(f'I/O error: {e}')
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
