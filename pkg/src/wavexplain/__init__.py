"""Time-domain explanations for frozen audio classifiers.

Given a trained classifier, the pipeline learns to synthesize an explanation
waveform that preserves the classifier's decision while its complement
destroys it, and ships the faithfulness-metric suite plus a listening-study
service for rating the results.
"""

__version__ = "0.1.0"
