"""
Command-line entry point.

    predmap synth-data --n 32 --seed 7
    predmap train --config toy.toml --data data/synth --out runs/toy
    predmap evaluate --checkpoint runs/toy/checkpoint.pt --queries q.jsonl --gallery g.npz

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Sequence

import torch

from predmap.config import TrainConfig, load_config, parse_override
from predmap.encoders import build_encoders
from predmap.errors import ArtifactError, FrozenEncoderError, NonFiniteError, PredmapError
from predmap.models.records import RunManifest, StepMetrics, record_to_json
from predmap.repository.memory_repository import MemoryRepository
from predmap.repository.sqlite_repository import SQLiteRepository
from predmap.retrieval import (QueryModel, compose_query, embed_gallery, evaluate_queries,
                               load_gallery, rank, rankings_to_json, read_queries,
                               save_gallery, train_composites)
from predmap.training import run_training
from predmap.utils import Stream, derive_rng, utc_now, version_string
from predmap.verify import run_suites
from predmap.view.report_view import ConsoleView, report_table
from predmap.world_views import (forge_batch, read_manifest, save_image, synth_dataset,
                                 write_dataset)


logger = logging.getLogger(__name__)

RUN_MANIFEST = 'run_manifest.json'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class UsageError(Exception):
    """ Bad command line """


class ArgumentParser(argparse.ArgumentParser):
    """ Parser raising UsageError instead of exiting with status 2 """

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f'expected a positive integer, got {text}')
    return value


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'bad K list {text!r}') from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError(f'K values must be positive integers, got {text!r}')
    return sorted(set(ks))


def _manifest_path(data: str) -> Path:
    path = Path(data)
    return path / 'manifest.jsonl' if path.is_dir() else path


def _config(args: argparse.Namespace) -> TrainConfig:
    """ File < --set overrides < dedicated flags """
    overrides: dict[str, Any] = dict(parse_override(item) for item in args.set)
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.workers is not None:
        overrides['workers'] = args.workers
    return load_config(args.config, overrides)


def _record_run(args: argparse.Namespace, command: str, out_dir: Path, seed: int,
                started: str) -> RunManifest:
    """ Write run_manifest.json into out_dir and register it when asked """
    manifest = RunManifest(command=command, config_path=str(getattr(args, 'config', '') or ''),
                           seed=seed, version=version_string(), started=started,
                           finished=utc_now(), output_dir=str(out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    data = record_to_json(manifest)
    data.pop('pk')
    with open(out_dir / RUN_MANIFEST, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2)
    if args.registry:
        SQLiteRepository.bind_database(args.registry)
        SQLiteRepository(RunManifest).add(manifest)
    return manifest


def cmd_synth_data(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Procedural image-caption pairs + manifest """
    started = utc_now()
    seed = args.seed if args.seed is not None else 0
    pairs = synth_dataset(args.n, derive_rng(seed, Stream.SYNTH), size=args.size)
    out = Path(args.out)
    manifest = write_dataset(pairs, out)
    _record_run(args, 'synth-data', out, seed, started)
    view.show_message(f'wrote {len(pairs)} pairs to {manifest}')
    return 0


def cmd_preview(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Forge triplets of step 0 and write their views as PNG files """
    started = utc_now()
    cfg = _config(args)
    pairs = read_manifest(_manifest_path(args.data))[:args.n]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / 'triplets.jsonl', 'w', encoding='utf-8') as f:
        for triplet in forge_batch(pairs, cfg, step=0, workers=cfg.workers):
            save_image(triplet.source_image, out / f'{triplet.id}-source.png')
            save_image(triplet.target_image, out / f'{triplet.id}-target.png')
            spec = triplet.crop_spec
            f.write(json.dumps({'id': triplet.id, 'action': triplet.action_text,
                                'x': spec.x, 'y': spec.y, 'width': spec.width,
                                'height': spec.height, 'crop_scale': spec.crop_scale,
                                'aspect': spec.aspect, 'masked': triplet.masked}) + '\n')
    _record_run(args, 'preview', out, cfg.seed, started)
    view.show_message(f'wrote {len(pairs)} triplets to {out}')
    return 0


def cmd_train(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Train a mapper; prints the final losses """
    started = utc_now()
    cfg = _config(args)
    pairs = read_manifest(_manifest_path(args.data))
    out = Path(args.out)
    recorded: MemoryRepository[StepMetrics] = MemoryRepository()
    result = run_training(cfg, pairs, out, resume=args.resume, registry=recorded)
    if args.registry:
        SQLiteRepository.bind_database(args.registry)
        registry = SQLiteRepository(StepMetrics)
        for metrics in recorded.get_all():
            registry.add(replace(metrics, pk=0))
    _record_run(args, 'train', out, result.state.cfg.seed, started)
    if result.metrics:
        view.show_metrics(result.metrics[-1])
    view.show_message(f'{len(recorded.get_all())} steps this run, '
                      f'checkpoint: {result.checkpoint}')
    return 0


def _model_or_config(args: argparse.Namespace) -> tuple[QueryModel | None, TrainConfig]:
    if args.checkpoint:
        model = QueryModel.from_checkpoint(args.checkpoint)
        return model, model.cfg
    return None, _config(args)


def cmd_embed_gallery(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Cache global features of every manifest image """
    started = utc_now()
    model, cfg = _model_or_config(args)
    if model is not None:
        encoders = model.encoders
    else:
        encoders = build_encoders(cfg.encoder_profile(),
                                  torch.float64 if cfg.float64 else torch.float32)
    pairs = read_manifest(_manifest_path(args.data))
    gallery = embed_gallery(pairs, encoders, workers=args.workers or 0)
    path = save_gallery(gallery, args.out)
    _record_run(args, 'embed-gallery', path.parent, cfg.seed, started)
    view.show_message(f'embedded {len(gallery)} images into {path}')
    return 0


def cmd_retrieve(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Top candidates per query as JSON-lines """
    started = utc_now()
    model = QueryModel.from_checkpoint(args.checkpoint)
    gallery = load_gallery(args.gallery)
    queries = read_queries(args.queries)
    rankings = [rank(compose_query(q, model), gallery, model.cfg.similarity) for q in queries]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, 'w', encoding='utf-8') as f:
        for row in rankings_to_json(queries, rankings, top=args.top):
            f.write(json.dumps(row) + '\n')
    _record_run(args, 'retrieve', out.parent, model.cfg.seed, started)
    view.show_message(f'ranked {len(queries)} queries into {out}')
    return 0


def cmd_evaluate(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Recall@K / mAP@K report as JSON and text """
    started = utc_now()
    model = QueryModel.from_checkpoint(args.checkpoint)
    if args.composites:
        pairs = read_manifest(_manifest_path(args.composites))
        queries = train_composites(pairs, model.cfg)
        gallery = embed_gallery(pairs, model.encoders, workers=args.workers or 0)
    else:
        if not args.queries or not args.gallery:
            raise UsageError('evaluate needs --queries and --gallery, or --composites')
        queries = read_queries(args.queries)
        gallery = load_gallery(args.gallery)
    report, _ = evaluate_queries(model, queries, gallery, args.k)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / 'eval'
    out.mkdir(parents=True, exist_ok=True)
    with open(out / 'report.json', 'w', encoding='utf-8') as f:
        json.dump(report.to_json(), f, indent=2)
    (out / 'report.txt').write_text(report_table(report) + '\n', encoding='utf-8')
    _record_run(args, 'evaluate', out, model.cfg.seed, started)
    view.show_report(report)
    return 0


def cmd_verify(args: argparse.Namespace, view: ConsoleView) -> int:
    """ Property suites; nonzero exit on any failure """
    results = run_suites(args.suite, seed=args.seed if args.seed is not None else 0)
    view.show_suites(results)
    return 0 if all(r.passed for r in results) else 2


def cmd_runs(args: argparse.Namespace, view: ConsoleView) -> int:
    """ List registered runs """
    if not Path(args.registry).exists():
        raise ArtifactError(args.registry, 'no run registry here')
    SQLiteRepository.bind_database(args.registry)
    view.show_runs(SQLiteRepository(RunManifest).get_all())
    return 0


def build_parser() -> ArgumentParser:
    """ Parser with one subcommand per pipeline stage """
    common = ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='root seed')
    common.add_argument('--workers', type=int, default=None,
                        help='parallel workers for data forging and gallery embedding')
    common.add_argument('--registry', default=None, help='SQLite run registry to record into')
    configured = ArgumentParser(add_help=False)
    configured.add_argument('--config', default=None, help='flat TOML config file')
    configured.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                            help='override a config key (repeatable)')

    parser = ArgumentParser(prog='predmap', description=__doc__.splitlines()[1])
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name: str, handler: Callable[..., int], *parents: ArgumentParser,
            help_text: str) -> ArgumentParser:
        cmd = sub.add_parser(name, parents=[common, *parents], help=help_text)
        cmd.set_defaults(handler=handler)
        return cmd

    cmd = add('synth-data', cmd_synth_data, help_text='generate synthetic pairs')
    cmd.add_argument('--n', type=_positive_int, default=32)
    cmd.add_argument('--out', default=os.path.join('data', 'synth'))
    cmd.add_argument('--size', type=int, default=64)

    cmd = add('preview', cmd_preview, configured, help_text='write forged triplets')
    cmd.add_argument('--data', required=True)
    cmd.add_argument('--n', type=_positive_int, default=8)
    cmd.add_argument('--out', default=os.path.join('runs', 'preview'))

    cmd = add('train', cmd_train, configured, help_text='train the mapper')
    cmd.add_argument('--data', required=True)
    cmd.add_argument('--out', default=os.path.join('runs', 'train'))
    cmd.add_argument('--resume', default=None, help='checkpoint to continue from')

    cmd = add('embed-gallery', cmd_embed_gallery, configured, help_text='cache gallery features')
    cmd.add_argument('--data', required=True)
    cmd.add_argument('--checkpoint', default=None)
    cmd.add_argument('--out', default=os.path.join('runs', 'gallery', 'gallery.npz'))

    cmd = add('retrieve', cmd_retrieve, help_text='rank the gallery for each query')
    cmd.add_argument('--checkpoint', required=True)
    cmd.add_argument('--queries', required=True)
    cmd.add_argument('--gallery', required=True)
    cmd.add_argument('--top', type=_positive_int, default=10)
    cmd.add_argument('--out', default=os.path.join('runs', 'retrieve', 'rankings.jsonl'))

    cmd = add('evaluate', cmd_evaluate, help_text='Recall@K and mAP@K')
    cmd.add_argument('--checkpoint', required=True)
    cmd.add_argument('--queries', default=None)
    cmd.add_argument('--gallery', default=None)
    cmd.add_argument('--composites', default=None, metavar='DATA',
                     help='evaluate on composites forged from these training pairs')
    cmd.add_argument('--k', type=_k_list, default=[1, 5, 10])
    cmd.add_argument('--out', default=None)

    cmd = add('verify', cmd_verify, help_text='run property suites')
    cmd.add_argument('--suite', choices=['grad', 'oracle', 'invariants', 'all'], default='all')

    add('runs', cmd_runs, help_text='list the run registry')
    return parser


def configure_logging(verbose: bool) -> None:
    """ Root logger from --verbose or PREDMAP_LOG_LEVEL """
    level = 'DEBUG' if verbose else os.environ.get('PREDMAP_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def main(argv: Sequence[str] | None = None, view: ConsoleView | None = None) -> int:
    """ Run one command; returns the exit code """
    view = view or ConsoleView()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        view.show_error(str(exc))
        return 1
    configure_logging(args.verbose)
    if args.command == 'runs' and not args.registry:
        args.registry = os.path.join('runs', 'registry.db')
    try:
        return int(args.handler(args, view))
    except (ArtifactError, NonFiniteError, FrozenEncoderError) as exc:
        view.show_error(str(exc))
        return 2
    except (UsageError, PredmapError, ValueError) as exc:
        view.show_error(str(exc))
        return 1
    except (OSError, RuntimeError) as exc:
        view.show_error(str(exc))
        return 2


if __name__ == '__main__':
    sys.exit(main())
