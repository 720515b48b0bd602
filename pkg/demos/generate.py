"""
End to end: image in, bytes out
===============================

Weights are random, so the text is noise. The point is the plumbing and
that the output is a pure function of config, seed and inputs.
"""

from vlmamba import ModelConfig, build_model, demo_image, encode_image, generate_greedy, generate_ids

cfg = ModelConfig(seed=0)
print("run id", cfg.run_id())

model = build_model(cfg)
img = demo_image(cfg, seed=1)
print(repr(generate_greedy(model, img, "what is shown?", 16)))
print(repr(generate_greedy(model, img, "what is shown?", 16)))

# The first-step distribution depends on the picture.
_, a = generate_ids(model, encode_image(model, demo_image(cfg, 1)), "?", 1)
_, b = generate_ids(model, encode_image(model, demo_image(cfg, 2)), "?", 1)
print("first-step logit change between images", abs(a - b).max())

for variant in ("MLP", "VSS_MLP", "VSS_L2"):
    c = cfg.replace(mmc_variant=variant)
    print(variant, repr(generate_greedy(c, demo_image(c, 1), "hi", 8)))
