"""Local and global tests on the Beta toy model.

A flat emulator (every coordinate Uniform(0, 1)) is compared with the true
Beta(theta, theta) simulator.  The local test at theta = 1 cannot tell them
apart because the two coincide there; the global test, which draws theta from
a Gamma(1, 1) prior, rejects the flat emulator.

    python demos/local_and_global.py
"""

from emuval import GammaPrior, GlobalTestConfig, LocalTestConfig, RegressionMethod, RegressionStatistic, RngStream
from emuval import SyntheticSetting, global_test, local_test

setting = SyntheticSetting("example1")
truth, flat = setting.true_model(), setting.approximate_model()
local = LocalTestConfig(RegressionStatistic(RegressionMethod.knn()), m_permutations=99, n_sim0=100, n_sim1=100)

for theta in (1.0, 3.0):
    res = local_test(theta, truth, flat, local, RngStream(1))
    print(f"local test at theta={theta}: statistic={res.statistic:.4f}  p={res.p_value:.2f}")

cfg = GlobalTestConfig(GammaPrior(), 50, local, "ks", 999)
for label, emulator in (("true", truth), ("flat", flat)):
    res = global_test(cfg, truth, emulator, RngStream(2))
    print(f"global test, {label} emulator: KS={res.statistic:.3f}  global p={res.global_p:.3f}")
