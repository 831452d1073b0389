"""Click-guided instance segmentation with similarity mining and group selection.

The package is organised around one shared feature pyramid:

- ``synthgen``   procedural scene synthesis (textured stuff regions populated
  with groups of repeated objects via distance-map copy-paste)
- ``backbone``   small conv feature-pyramid extractor (strides 4/8/16/32)
- ``clickseg``   one-click segmentation: click embedding + anchor-free
  detection filtered by clicks + dynamic-kernel masking
- ``cpn``        click proposal network: masked ROI queries, cascaded
  cross-attention, click-likelihood heatmap and peak extraction
- ``pvm``        pairwise proposal verification via embeddings
- ``ids``        the iterative group-selection loop tying the above together
- ``baselines``  non-learned similarity heatmaps for comparison
- ``evalsuite``  metrics (AUC-PR, size-bucketed AP/AR, IoU vs clicks) and
  ablation protocols
- ``trainer``    staged training (segmenter -> proposal net -> verifier)
- ``service``    session-oriented HTTP API for interactive use
- ``cli``        synth / train / eval / serve / demo entrypoint
"""

__version__ = "0.1.0"
