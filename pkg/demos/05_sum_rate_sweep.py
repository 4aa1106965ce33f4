"""A miniature Monte-Carlo sweep over the pilot count.

Every constellation draws users from the evaluation set and runs all
requested schemes on identical channels and pilot noise, so comparisons are
paired. Full-size sweeps are driven the same way through the `limfb sweep`
CLI; this demo keeps the constellation count small to finish in seconds.
"""

import tempfile
from pathlib import Path

from limfb import (EmOptions, Experiment, ExperimentConfig, SceneConfig,
                   emit_csv, fit_em, generate_channels, normalize_dataset,
                   run_sweep)

config = ExperimentConfig.desk_profile(
    users=4, constellations=25, seed=11, snr_db=(10.0,),
    schemes=("gmm-obs", "gmm-obs+swmmse", "dft:lmmse", "dft:omp"))

scene = SceneConfig(config.geometry, seed=7)
train = normalize_dataset(generate_channels(scene, 5000, sample_seed=1))
evalset = normalize_dataset(generate_channels(scene, 1000, sample_seed=2))
model = fit_em(train, 2 ** config.bits,
               options=EmOptions(max_iters=40, seed=3),
               geometry=config.geometry)

experiment = Experiment(config, train_dataset=train, eval_dataset=evalset,
                        models={("full", config.bits): model})
result = run_sweep(experiment, "pilots", values=[2, 4, 8])

print(f"mean sum-rate (bps/Hz) over {config.constellations} constellations, "
      f"J={config.users}, SNR 10 dB:")
header = f"{'n_p':>4}" + "".join(f"{tag:>16}" for tag in result.schemes)
print(header)
for i, value in enumerate(result.values):
    row = f"{value:>4}"
    for tag in result.schemes:
        row += f"{result.means[tag][i]:>10.3f}+-{result.std_errors[tag][i]:<4.2f}"
    print(row)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "sweep.csv"
    emit_csv(result, path)
    print(f"\nCSV written ({path.stat().st_size} bytes); header:")
    print("  " + path.read_text().splitlines()[0])
