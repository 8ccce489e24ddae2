"""Train a tablet view classifier and write a ready-to-serve config directory.

    python3 demos/build_service_config.py out/
    imageselect serve --config out/config.yaml
"""
from __future__ import annotations

import sys
from pathlib import Path

import yaml

from imageselect.imagetypes import CategoryProfile, ImageType, dump_profiles, train_centroid_classifier
from imageselect.synthetic import VIEW_LABELS, view_training_set


def main(out: str) -> None:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile = CategoryProfile(
        "tablets", tuple(ImageType(label, k + 1, 1) for k, label in enumerate(VIEW_LABELS)), ("tablet", "ipad")
    )
    model = train_centroid_classifier(view_training_set(), profile)
    dump_profiles([profile], out_dir / "profiles.yaml")
    model.save(out_dir / "tablets.json")
    config = {
        "profiles": "profiles.yaml",
        "models": {"tablets": "tablets.json"},
        "comparator": {"phash_threshold": 10, "dhash_threshold": 20, "hist_threshold": 0.3},
        "quality": {"min_resolution": 200},
        "fetch": {"max_parallel": 8, "per_url_timeout": 10.0},
        "port": 8080,
    }
    (out_dir / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    print(f"wrote profiles.yaml, tablets.json and config.yaml to {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "demo_config")
