"""Separate TV against joint ICB on the PET/MRI phantom for the four k-space masks.

Prints an SSIM table and saves a montage. Takes several minutes at size 128.
Usage: python3 demos/petmri_study.py [size] [out.png]
"""

import logging
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from icbrecon.experiments import joint_benefit_study


def main(size=128, out="petmri_study.png"):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    study = joint_benefit_study(size=size)
    print(f"{'mask':8s} {'TV pet':>7s} {'ICB pet':>7s} {'TV mri':>7s} {'ICB mri':>7s}")
    for kind, r in study.items():
        print(f"{kind:8s} {r['tv']['pet_ssim']:7.3f} {r['icb']['pet_ssim']:7.3f} "
              f"{r['tv']['mri_ssim']:7.3f} {r['icb']['mri_ssim']:7.3f}")
    fig, axes = plt.subplots(len(study), 4, figsize=(10, 2.6 * len(study)), squeeze=False)
    for row, (kind, r) in zip(axes, study.items()):
        imgs = (*r["images"]["tv"], *r["images"]["icb"])
        for ax, img, title in zip(row, imgs, ("TV PET", "TV MRI", "ICB PET", "ICB MRI")):
            ax.imshow(img, cmap="gray")
            ax.set_title(f"{kind} {title}", fontsize=8)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    print("wrote", out)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 128, *sys.argv[2:3])
