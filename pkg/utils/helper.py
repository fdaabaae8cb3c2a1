import argparse, json, logging, os, sys, yaml, numpy as np
from dataclasses import fields, replace
from pythonjsonlogger import jsonlogger
from utils.errors import ConfigError

VERSION = '0.1.0'

# argument parsing
def parse_args(argv=None):
    parser = argparse.ArgumentParser(description='Deep Graph Sprints')

    # options shared by all subcommands
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config',
                        type=str,
                        default=None,
                        help='flat yaml file of TrainConfig values')
    common.add_argument('--out',
                        type=str,
                        default=None,
                        help='output directory')
    common.add_argument('--seed',
                        type=int,
                        default=None)
    common.add_argument('--pbar',
                        action='store_true',
                        default=False)

    # data selection
    common.add_argument('--data',
                        dest='data_path',
                        type=str,
                        default=None,
                        help='edge-event csv, relative paths fall back to $DGS_DATA_DIR')
    common.add_argument('--dataset',
                        type=str,
                        default=None,
                        help='wikipedia, reddit or mooc')
    common.add_argument('--feature-dim',
                        dest='feature_dim',
                        type=int,
                        default=None)
    common.add_argument('--synthetic',
                        action='store_const',
                        const=True,
                        default=None,
                        help='use the planted-signal generator')
    common.add_argument('--delta-t',
                        dest='delta_t',
                        action='store_const',
                        const=True,
                        default=None)

    # model and training
    common.add_argument('--task',
                        type=str,
                        default=None,
                        help='node_class or link_pred')
    common.add_argument('--variant',
                        type=str,
                        default=None,
                        help='dgs, dgs_v, dgs_s, dgs_sum, dgs_bp, gs or raw')
    common.add_argument('--state-size',
                        dest='state_size',
                        type=int,
                        default=None)
    common.add_argument('--batch-size',
                        dest='batch_size',
                        type=int,
                        default=None)
    common.add_argument('--max-epochs',
                        dest='max_epochs',
                        type=int,
                        default=None)
    common.add_argument('--threads',
                        type=int,
                        default=None)
    common.add_argument('--pos-weight',
                        dest='pos_weight',
                        type=str,
                        default=None,
                        help='positive class weight, or "ratio" for neg/pos')

    sub = parser.add_subparsers(dest='mode', required=True)

    ingest = sub.add_parser('ingest', parents=[common])
    ingest.add_argument('--buckets',
                        type=int,
                        default=None)

    train = sub.add_parser('train', parents=[common])
    train.add_argument('--seeds',
                       type=str,
                       default=None,
                       help='comma separated seeds for retraining')

    evaluate = sub.add_parser('eval', parents=[common])
    evaluate.add_argument('--checkpoint',
                          type=str,
                          required=True)
    evaluate.add_argument('--protocol',
                          type=str,
                          default='transductive')
    evaluate.add_argument('--split',
                          type=str,
                          default='test')
    evaluate.add_argument('--dump-params',
                          dest='dump_params',
                          action='store_true',
                          default=False)

    bench = sub.add_parser('bench', parents=[common])
    bench.add_argument('--checkpoint',
                       type=str,
                       default=None)
    bench.add_argument('--batches',
                       type=int,
                       default=200)
    bench.add_argument('--iterations',
                       type=int,
                       default=10)

    tune = sub.add_parser('tune', parents=[common])
    tune.add_argument('--budget',
                      type=int,
                      default=20)

    return parser.parse_args(argv)

def load_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError('config not found: %s' % path)

    with open(path, 'r') as fl:
        try:
            values = yaml.safe_load(fl)
        except yaml.YAMLError as err:
            raise ConfigError('config does not parse: %s' % err) from None

    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError('config must be a flat mapping')
    return values

# defaults < config file < command-line flags
def make_config(cls, file_values, args=None):
    names = {f.name for f in fields(cls)}
    unknown = set(file_values) - names
    if unknown:
        raise ConfigError('unknown config keys: %s' % ', '.join(sorted(unknown)))

    config = replace(cls(), **file_values)
    if args is not None:
        overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
        config = replace(config, **overrides)

    return config

def log_init(run_name=None, level=logging.INFO):
    # human-readable logs go to stderr (and the run log file)
    handlers = [logging.StreamHandler(sys.stderr)]
    if run_name is not None:
        handlers.append(logging.FileHandler(run_name + '.log'))

    logging.basicConfig(
        level=level,
        format="%(asctime)s %(message)s",
        datefmt='%m/%d/%Y %I:%M:%S %p',
        handlers=handlers,
        force=True)

def _json_logger(name, stream):
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler(stream)
        handler.setFormatter(jsonlogger.JsonFormatter('%(levelname)s'))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
        logger.propagate = False

    # follow sys.stdout / sys.stderr if they were swapped since,
    # the old stream may already be closed so it is not flushed
    logger.handlers[0].stream = stream
    return logger

def plain(obj):
    # numpy values to json-compatible python values
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj

def emit_record(kind, record, path=None):
    '''
    One machine-readable record: a json line on stdout,
    appended to path when given
    '''
    record = plain({'kind': kind, **record})
    _json_logger('records', sys.stdout).info(record)

    if path is not None:
        with open(path, 'a') as fl:
            fl.write(json.dumps(record) + '\n')

    return record

def emit_error(err, exit_code):
    record = {'level': 'error', 'kind': type(err).__name__, 'message': str(err),
              'exit_code': exit_code}
    _json_logger('errors', sys.stderr).error(record)
    return record
