import os, sys, time, json, logging, yaml
from dataclasses import dataclass, field, asdict, replace
from utils.helper import VERSION, parse_args, load_config, make_config, log_init
from utils.helper import emit_record, emit_error, plain
from utils.errors import DgsError
from utils.dataset import temporal_split, feature_stats, write_stream_csv, write_stats
from utils.training import TrainConfig, load_stream, load_splits, train, evaluate
from utils.training import init_model, load_model, retrain_seeds, score_test_split
from utils.tuning import random_search
from utils.bench import latency_bench
from sprints.dgs import DgsParams

# fields of the data source, flags may point a checkpoint at another copy
DATA_KEYS = ('data_path', 'dataset', 'synthetic', 'feature_dim')

@dataclass
class RunManifest:
    subcommand: str
    config_path: str
    seed: int
    version: str = VERSION
    outputs: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    exit_code: int = 0

def out_path(args, name):
    return os.path.join(args.out, name)

def counts_record(model):
    er, head, total = model.count_parameters()
    return {'er_count': er, 'head_count': head, 'total_count': total}

def cmd_ingest(args, config):
    stream, fractions = load_stream(config)
    train_set, val_set, test_set = temporal_split(stream, fractions)
    stats = feature_stats(train_set, config.buckets)

    outputs = {'events': out_path(args, 'events.csv'), 'stats': out_path(args, 'stats.jsonl')}
    write_stream_csv(stream, outputs['events'])
    write_stats(stats, outputs['stats'])

    emit_record('ingest', {'events': len(stream), 'train': len(train_set),
                           'val': len(val_set), 'test': len(test_set),
                           'nodes': stream.node_count, 'feature_dim': stream.feature_dim})
    return outputs

def cmd_train(args, config):
    splits = load_splits(config)
    history = out_path(args, 'history.jsonl')

    if args.seeds:
        seeds = [int(seed) for seed in args.seeds.split(',')]
        rows, summary = retrain_seeds(config, splits, seeds, args.pbar, history)
        for row in rows:
            emit_record('seed', row)
        emit_record('summary', {'seeds': seeds, 'metrics': summary})
        return {'history': history}

    model = train(config, splits, show_bar=args.pbar, record_path=history)
    checkpoint = model.save(out_path(args, 'model.h5'))

    emit_record('parameters', counts_record(model))
    emit_record('metrics', {'split': 'test', 'best_val': model.best_metric(),
                            **score_test_split(model, splits)})
    return {'checkpoint': checkpoint, 'history': history}

def cmd_eval(args, config):
    model = load_model(args.checkpoint)

    if args.dump_params:
        params = model.params
        record = {'variant': model.config.variant}
        if isinstance(params, DgsParams):
            record.update(alpha=params.alpha, beta=params.beta, w=params.w)
        elif params is not None:
            record.update(alpha=params.alpha, beta=params.beta)
        emit_record('params', record)

    overrides = {key: getattr(args, key) for key in DATA_KEYS if getattr(args, key) is not None}
    splits = load_splits(replace(model.config, **overrides))

    metrics = evaluate(model, splits, args.split, args.protocol, show_bar=args.pbar)
    emit_record('parameters', counts_record(model))
    emit_record('metrics', {'split': args.split, 'protocol': args.protocol, **metrics})
    return {}

def cmd_bench(args, config):
    if args.checkpoint is not None:
        model = load_model(args.checkpoint)
        overrides = {key: getattr(args, key) for key in DATA_KEYS if getattr(args, key) is not None}
        config = replace(model.config, **overrides)
        stream, _ = load_stream(config)
    else:
        config.validate()
        stream, _ = load_stream(config)
        model = init_model(config, load_splits(config))

    report = latency_bench(model.engine(), stream, args.batches, config.batch_size,
                           args.iterations, dataset=config.dataset or 'synthetic',
                           name=config.variant)

    outputs = {'latency': out_path(args, 'latency.csv')}
    report.write_csv(outputs['latency'])
    emit_record('latency', report.record())
    return outputs

def cmd_tune(args, config):
    splits = load_splits(config)
    objective = lambda trial: train(trial, splits, show_bar=args.pbar).best_metric()

    trials = out_path(args, 'trials.jsonl')
    best, _ = random_search(config, args.budget, config.seed, objective, record_path=trials)

    outputs = {'trials': trials, 'best_config': out_path(args, 'best_config.yaml')}
    with open(outputs['best_config'], 'w') as fl:
        yaml.safe_dump(plain(asdict(best)), fl)

    emit_record('best_config', plain(asdict(best)))
    return outputs

COMMANDS = {'ingest': cmd_ingest, 'train': cmd_train, 'eval': cmd_eval,
            'bench': cmd_bench, 'tune': cmd_tune}

def main(argv=None):
    args = parse_args(argv)
    args.out = args.out or '.'
    os.makedirs(args.out, exist_ok=True)
    log_init(out_path(args, args.mode))

    manifest = RunManifest(args.mode, args.config, args.seed)
    start_time = time.time()
    try:
        config = make_config(TrainConfig, load_config(args.config), args)
        manifest.seed = config.seed
        logging.info('configuration: %s' % json.dumps(plain(asdict(config))))

        manifest.outputs = COMMANDS[args.mode](args, config)

    except DgsError as err:
        manifest.exit_code = err.exit_code
        emit_error(err, err.exit_code)

    except Exception as err:
        # e.g. an h5py write failure
        logging.exception('unexpected error')
        manifest.exit_code = 1
        emit_error(err, 1)

    finally:
        # exactly one manifest per run
        manifest.wall_clock = time.time() - start_time
        with open(out_path(args, 'manifest.json'), 'w') as fl:
            json.dump(plain(asdict(manifest)), fl)
        emit_record('manifest', asdict(manifest))

    return manifest.exit_code

if __name__ == '__main__':
    sys.exit(main())
