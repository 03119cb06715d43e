import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from aperture import dataset, doa_estimation, reporting
from aperture.array_model import ArrayConfig
from aperture.config import PRESETS, load_run_config, write_config
from aperture.cube_pipeline import CubeTarget, cube_to_snapshots, normalize_magnitude, read_cube, synth_fmcw_cube, \
    write_cube
from aperture.errors import ApertureError, ConfigError, DatasetIOError, DegenerateInputError
from aperture.evaluation import ARTIFICIAL, LARGE, arm_vectors, phase_profile, run_study
from aperture.extrapolator import build_training_data, extrapolate_bidirectional_batch, init_model, load_model, \
    save_model, train
from aperture.scene_sim import Scene, Snapshot, generate_dataset, sample_scene, scene_seeds

logger = logging.getLogger('aperture_app')

# ----- Estimator dictionary -----
estimator_functions = {
    'fourier': doa_estimation.fourier_spectrum,
    'music': doa_estimation.ss_music_spectrum,
}

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


# ----- Loaders -----
def load_snapshots(path, rows, num_elements, spacing_wavelengths):
    samples = dataset.read_dataset(path)
    if samples.shape[1] != num_elements:
        raise ConfigError('{0} holds {1}-element records, the configuration expects M={2}'.format(
            path, samples.shape[1], num_elements))
    cfg = ArrayConfig(num_elements, spacing_wavelengths)
    return [Snapshot(np.asarray(samples[i], dtype=complex), cfg) for i in rows]


def load_scenes(path, rows):
    if not dataset.truth_path(path).exists():
        return None
    truths = dataset.read_truth(path)
    return [Scene.from_dict(truths[i]) for i in rows]


def load_checked_model(path, config):
    model = load_model(path)
    if model.head == 'block' and model.output_steps != config.rollout_len:
        raise ConfigError('Model predicts {0} samples per side, M={1} and L={2} need {3}'.format(
            model.output_steps, config.num_elements, config.small_elements, config.rollout_len))

    provenance = Path(str(path) + '.config.json')
    if provenance.exists():
        trained = json.loads(provenance.read_text())
        sizes = (trained.get('num_elements'), trained.get('small_elements'))
        if sizes != (config.num_elements, config.small_elements):
            raise ConfigError('Model was trained for M={0}, L={1}; this run uses M={2}, L={3}'.format(
                sizes[0], sizes[1], config.num_elements, config.small_elements))
    return model


def _inner(samples, config):
    """Inner L samples of every record; records may already be L long."""
    width = samples.shape[1]
    if width == config.small_elements:
        return samples
    if width == config.num_elements:
        half = config.extra_elements // 2
        return samples[:, half:half + config.small_elements]
    raise ConfigError('Records of length {0} fit neither M={1} nor L={2}'.format(
        width, config.num_elements, config.small_elements))


# ----- Commands -----
def cmd_simulate(args, config):
    if args.fmcw:
        return _simulate_cube(args, config)

    summary = generate_dataset(config.sim, config.large_array, args.count, args.out, config.master_seed,
                               fractions=config.split, jobs=config.jobs, noiseless=args.noiseless,
                               progress=args.progress)
    write_config(config, str(args.out) + '.config.json')
    print('records={0} M={1} seed={2} splits={3} -> {4}'.format(
        summary.count, summary.num_elements, summary.master_seed, summary.splits, summary.path))
    return 0


def _simulate_cube(args, config):
    scene_seed, noise_seed = scene_seeds(config.master_seed, 0)
    scene = sample_scene(config.sim, scene_seed)
    rng = np.random.default_rng(scene_seed)
    fmcw = config.fmcw
    max_speed = fmcw.wavelength / (4 * fmcw.chirp_period_s)

    targets = [CubeTarget(float(rng.uniform(0.1, 0.9) * fmcw.max_range),
                          float(rng.uniform(-0.9, 0.9) * max_speed),
                          t.angle_deg, t.rcs_db + scene.snr_db, t.phase_rad) for t in scene.targets]
    cube = synth_fmcw_cube(targets, fmcw, config.large_array, seed=noise_seed, noise_std=config.sim.noise_std)
    write_cube(args.out, cube)
    Path(str(args.out) + '.targets.json').write_text(
        json.dumps([dataclasses.asdict(t) for t in targets], indent=2, sort_keys=True))
    print('cube={0} targets={1} M={2} seed={3} -> {4}'.format(
        cube.data.shape, len(targets), config.num_elements, config.master_seed, args.out))
    return 0


def cmd_train(args, config):
    count = dataset.read_header(args.dataset)[1]
    splits = dataset.split_indices(count, config.split)
    train_snaps = load_snapshots(args.dataset, splits['train'], config.num_elements, config.spacing_wavelengths)
    val_snaps = load_snapshots(args.dataset, splits['val'], config.num_elements, config.spacing_wavelengths)

    data = build_training_data(train_snaps, val_snaps, config.small_elements, config.extra_elements)
    train_cfg = dataclasses.replace(config.train, master_seed=config.master_seed)
    model = init_model(config.hidden_size, seed=config.master_seed, head=train_cfg.head,
                       output_steps=config.rollout_len)
    logger.info('training on %d pairs, validating on %d', len(data.train_inputs), len(data.val_inputs))

    model, log = train(model, data, train_cfg, progress=args.progress)
    save_model(model, args.out)
    log.to_frame().to_csv(str(args.out) + '.log.csv', index=False, float_format=reporting.FLOAT_FORMAT,
                          lineterminator='\n')
    write_config(config, str(args.out) + '.config.json')

    if log.records:
        last = log.records[-1]
        print('epochs={0} best_epoch={1} train_loss={2:.6g} val_loss={3:.6g} -> {4}'.format(
            last['epoch'], log.best_epoch, last['train_loss'], last['val_loss'], args.out))
    else:
        print('epochs=0 (initial weights) -> {0}'.format(args.out))
    return 0


def cmd_evaluate(args, config):
    num_elements, count = dataset.read_header(args.dataset)
    if num_elements != config.num_elements:
        raise ConfigError('{0} holds {1}-element records, the configuration expects M={2}'.format(
            args.dataset, num_elements, config.num_elements))
    rows = dataset.split_indices(count, config.split)['test'] if args.split == 'test' else range(count)
    if args.limit is not None:
        rows = rows[:args.limit]

    samples = np.asarray(dataset.read_dataset(args.dataset)[rows.start:rows.stop], dtype=complex)
    scenes = load_scenes(args.dataset, rows)
    model = load_checked_model(args.model, config) if args.model else None

    settings = config.study
    if args.estimator:
        estimators = ('fourier', 'music') if args.estimator == 'both' else (args.estimator,)
        settings = dataclasses.replace(settings, estimators=estimators)
    if scenes is None and settings.truth_source == 'simulated':
        logger.warning('%s has no truth sidecar; scoring against large-aperture detections', args.dataset)
        settings = dataclasses.replace(settings, truth_source=LARGE)

    tables = run_study(samples, scenes, model, config.large_array, config.small_elements, settings,
                       snr_set=config.sim.snr_set_db, noise_var=config.sim.noise_std ** 2,
                       jobs=config.jobs, progress=args.progress)
    out = Path(args.out)
    written = reporting.write_reports(tables, out)
    figures = reporting.render_figures(out)
    figures.extend(plot_first_scene(samples[0], scenes[0] if scenes else None, model, config, settings, out))
    write_config(config, out / 'config.json')

    print('scenes={0} arms={1} estimators={2}'.format(len(samples), list(tables.resolution['aperture']),
                                                      list(settings.estimators)))
    for path in written + figures:
        print(path)
    return 0


def plot_first_scene(record, scene, model, config, settings, out):
    arms = {arm: values[0] for arm, values in arm_vectors(record[None, :], model, config.small_elements).items()}
    name = settings.estimators[0]
    kwargs = {'spacing_wavelengths': config.spacing_wavelengths}
    if name == 'music':
        kwargs['num_targets'] = len(scene.targets) if scene is not None else 1
    else:
        kwargs['grid_size'] = settings.grid_size

    try:
        spectra = {arm: estimator_functions[name](v, **kwargs) for arm, v in arms.items()}
    except (ConfigError, DegenerateInputError) as e:
        logger.warning('skipping the example-scene figure: %s', e)
        return []
    truths = list(scene.angles_deg) if scene is not None else []
    figures = [reporting.plot_example_scene(spectra, truths, out / 'example_scene.svg')]
    if ARTIFICIAL in arms:
        profiles = {arm: phase_profile(arms[arm]) for arm in (LARGE, ARTIFICIAL)}
        figures.append(reporting.plot_phase(profiles, out / 'phase_profile.svg'))
    return figures


def cmd_extrapolate(args, config):
    model = load_checked_model(args.model, config)
    source = Path(args.input)
    if Path(str(source) + '.json').exists():
        cube = read_cube(source)
        snaps = cube_to_snapshots(cube, config.cfar.validate(),
                                  ArrayConfig(cube.num_antennas, config.spacing_wavelengths))
        if not snaps:
            raise ConfigError('CFAR found no detections in {0}'.format(source))
        records = np.stack([s.samples for s in snaps])
        truths = [{'cell': list(s.cell)} for s in snaps]
    else:
        records = np.asarray(dataset.read_dataset(source), dtype=complex)
        truths = dataset.read_truth(source) if dataset.truth_path(source).exists() else None

    inner = _inner(records, config)
    normalized, scales = np.zeros_like(inner), np.zeros(len(inner))
    for i, v in enumerate(inner):
        try:
            normalized[i], scales[i] = normalize_magnitude(v)
        except DegenerateInputError:
            logger.debug('record %d has an all-zero inner aperture', i)
    steps = config.extra_elements // 2
    full = extrapolate_bidirectional_batch(model, normalized, steps) * scales[:, None]
    # inner samples pass through untouched
    full[:, steps:steps + config.small_elements] = inner

    dataset.write_dataset(args.out, full, truths)
    print('records={0} L={1} -> M={2} -> {3}'.format(len(full), config.small_elements, full.shape[1], args.out))
    return 0


def cmd_report(args, config):
    for path in reporting.render_figures(args.report_dir):
        print(path)
    return 0


# ----- Argument parsing -----
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file with keys mirroring RunConfig fields')
    common.add_argument('--preset', choices=sorted(PRESETS), default='desk')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--jobs', type=int, help='worker processes; 1 keeps runs byte-identical')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')

    parser = argparse.ArgumentParser(prog='aperture-forge',
                                     description='MIMO radar aperture extrapolation toolkit')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', parents=[common], help='generate a Monte-Carlo dataset')
    simulate.add_argument('--count', type=int, default=1000)
    simulate.add_argument('--noiseless', action='store_true')
    simulate.add_argument('--fmcw', action='store_true', help='write one FMCW radar cube instead')
    simulate.add_argument('-o', '--out', required=True)
    simulate.set_defaults(func=cmd_simulate)

    train_cmd = commands.add_parser('train', parents=[common], help='train the extrapolator')
    train_cmd.add_argument('--dataset', required=True)
    train_cmd.add_argument('-o', '--out', required=True)
    train_cmd.set_defaults(func=cmd_train)

    evaluate = commands.add_parser('evaluate', parents=[common], help='score large, small and artificial apertures')
    evaluate.add_argument('--dataset', required=True)
    evaluate.add_argument('--model')
    evaluate.add_argument('--estimator', choices=sorted(estimator_functions) + ['both'])
    evaluate.add_argument('--split', choices=['test', 'all'], default='test')
    evaluate.add_argument('--limit', type=int)
    evaluate.add_argument('-o', '--out', required=True, help='report directory')
    evaluate.set_defaults(func=cmd_evaluate)

    extrapolate = commands.add_parser('extrapolate', parents=[common], help='extend L-element snapshots to M')
    extrapolate.add_argument('--input', required=True, help='ARDS dataset or radar cube')
    extrapolate.add_argument('--model', required=True)
    extrapolate.add_argument('-o', '--out', required=True)
    extrapolate.set_defaults(func=cmd_extrapolate)

    report = commands.add_parser('report', parents=[common], help='re-render SVG figures from report CSVs')
    report.add_argument('report_dir')
    report.set_defaults(func=cmd_report)
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args)
    args.progress = not args.quiet and sys.stderr.isatty()

    try:
        config = load_run_config(args.config, preset=args.preset, seed=args.seed, jobs=args.jobs)
        if config.jobs == 1:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)
        return args.func(args, config)
    except ApertureError as e:
        print('error: {0}'.format(e), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print('error: {0}'.format(e), file=sys.stderr)
        return DatasetIOError.exit_code


if __name__ == '__main__':
    sys.exit(main())
