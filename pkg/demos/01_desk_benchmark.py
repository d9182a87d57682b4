"""Desk-scale benchmark on a synthetic cohort.

Generates a cohort whose labels depend on both the pulse wave and the
demographics, curates and splits it, then trains the PPG-only and the
multimodal Inception variants and prints the comparison table.

    python demos/01_desk_benchmark.py            # about two minutes on one core
"""

from ppgbench.curation import apply_cohort_filter, apply_quality_filter, summarize_cohort
from ppgbench.metrics import aami_gate, compute_metrics
from ppgbench.modelzoo import ModelSpec, build_model
from ppgbench.report import benchmark_report
from ppgbench.splits import build_split
from ppgbench.synthgen import SynthConfig, generate_cohort
from ppgbench.train import TrainConfig, predict, train

SEED = 0

ds, sidecar = generate_cohort(SynthConfig(n_subjects=40, segments_per_subject=(50, 60), seed=SEED,
                                          sample_rate_hz=32.0, segment_length=128))
ds, quality = apply_quality_filter(ds)
ds, cohort = apply_cohort_filter(ds)
print("cohort after curation")
print(summarize_cohort(ds).to_text())

split = build_split(ds, cal_free_subject_fraction=0.1, cal_based_segment_fraction=0.1, seed=SEED)
for name, part in split.partitions().items():
    print(f"{name:>9}: {part.n_subjects} subjects, {len(part)} segments")

# narrow models and a short schedule; the architecture is otherwise the reference one
cfg = TrainConfig(epochs=8, lr=1e-3, shuffle_seed=SEED, init_output_bias=True)
sets = []
for demo in (False, True):
    spec = ModelSpec("inception1d", demo, "SBP", ds.segment_length, SEED, width_scale=0.125)
    tm = train(build_model(spec), split.train, cfg,
               progress=lambda e, loss: print(f"  {spec.name} epoch {e + 1}: train MSE {loss:.2f}"))
    for proto in ("cal_based", "cal_free"):
        p = predict(tm, split.partitions()[proto], proto)
        m = compute_metrics(p)
        print(f"{spec.name:>10} {proto:9} MAE {m.mae:.2f}  SD {m.sd:.2f}  AAMI {aami_gate(m).passed}")
        sets.append(p)

print()
print(benchmark_report(sets).to_table())
