"""Why replace attention at all: linear vs quadratic token mixing.

Two kinds of evidence, both produced by the bench module:

1. exact multiply-add counts (deterministic; the wavelet transform stage
   follows the geometric series 8 d T (1 - 2^-L), attention carries the
   T^2 d_k query-key term), and
2. measured wall-clock over a ladder of sequence lengths, with a fitted
   log-log slope.

The attention ladder reaches T=4096 here to keep the demo quick; the
acceptance suite goes to 8192.
"""

from haarmixer.bench import (
    attention_op_counts,
    bench_mixer,
    wavelet_mixer_op_counts,
)

D = 64
LEVELS = 3
HEADS = 4

print("exact multiply-add counts, d=64:")
print(f"{'T':>6}  {'wavelet total':>14}  {'attention total':>16}  ratio")
for t in (256, 512, 1024, 2048, 4096, 8192):
    wav = sum(wavelet_mixer_op_counts(t, D, LEVELS).values())
    att = sum(attention_op_counts(t, D, HEADS).values())
    print(f"{t:>6}  {wav:>14,}  {att:>16,}  {att / wav:6.1f}x")

print("\nper-category at T=1024:")
print("  wavelet  :", wavelet_mixer_op_counts(1024, D, LEVELS))
print("  attention:", attention_op_counts(1024, D, HEADS))

print("\ntiming (median seconds per forward, single-threaded)...")
t_list = [256, 512, 1024, 2048, 4096]
wav = bench_mixer("wavelet", t_list, d=D, levels=LEVELS, reps=5, seed=0)
att = bench_mixer("attention", t_list, d=D, heads=HEADS, reps=5, seed=0)

print(f"{'T':>6}  {'wavelet ms':>11}  {'attention ms':>13}")
for t in t_list:
    print(f"{t:>6}  {wav.medians[t] * 1e3:>11.3f}  {att.medians[t] * 1e3:>13.3f}")

print(f"\nfitted log-log slopes: wavelet {wav.slope:.2f} "
      f"(95% CI {wav.slope_ci[0]:.2f}..{wav.slope_ci[1]:.2f}), "
      f"attention {att.slope:.2f} "
      f"(95% CI {att.slope_ci[0]:.2f}..{att.slope_ci[1]:.2f})")
print("slope 1 = linear cost, slope 2 = quadratic.")
