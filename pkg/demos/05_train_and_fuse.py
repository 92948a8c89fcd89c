# %% [markdown]
# # Training with noise augmentation and fusing packets
#
# A small run (4 devices, SF7) to show the pieces together: online noise
# augmentation during training, then multi-packet fusion at test time.
# Runs in a few seconds.

# %%
import numpy as np

from lorarffi.evaluation import run_sweep
from lorarffi.impairments import gen_dataset, make_device_bank
from lorarffi.model import ModelConfig, TrainConfig, lora_configs, train
from lorarffi.waveform import LoraConfig

bank = make_device_bank(4, seed=1)
cfg = LoraConfig(7)
train_set = gen_dataset(bank, [cfg], 80, "clean", seed=0)
test_set = gen_dataset(bank, [cfg], 30, "clean", seed=0, cell_offset=len(bank))

ckpt = train(train_set, ModelConfig(n_classes=4), TrainConfig(augmentation="online", max_epochs=15, seed=0),
             on_epoch=lambda e, tl, vl, va, lr: print(f"epoch {e + 1:2d} train {tl:.3f} val {vl:.3f} acc {va:.2f}"))

# %%
model = ckpt.to_model()
results = run_sweep(model, test_set, lora_configs(test_set, 250e3), snrs=[30, 15, 5], sfs=[7], n_pkts=[1, 5], seed=0)
for r in results:
    print(f"{r.snr_db:4.0f} dB  N_pkt={r.n_pkt}  accuracy {r.accuracy:.3f}")
print(results[-1].confusion)
