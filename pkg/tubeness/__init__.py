"""
tubeness - rating-supervised vesselness segmentation of perivascular spaces.

Modules:
    volume       volumes, masks, file formats, isotropic reslicing
    hessian      scale-space Hessian and 3x3 eigenvalues
    vesselness   multiscale Frangi filter and thresholding
    components   connected components, length gate, PVS counts
    ologit       ordered logit rating model and its calibration
    optimizer    grid search of segmentation parameters
    phantom      synthetic tube phantoms
    stats        Spearman rank correlation
    cli          command-line entry point
"""

__version__ = "0.1.0"
