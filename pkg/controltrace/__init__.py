# Licensed under a 3-clause BSD style license - see LICENSE.rst

"""
Trace a SysML architecture model to prioritized NIST 800-53 controls through
CPE, CVE and ATT&CK, and score the mapping models that drive it.
"""

# Affiliated packages may add whatever they like to this file, but
# should keep this content at the top.
# ----------------------------------------------------------------------------
from ._astropy_init import *  # noqa
# ----------------------------------------------------------------------------

from astropy import config as _config


class Conf(_config.ConfigNamespace):
    """
    Configuration parameters for `controltrace`.
    """
    technique_top_k = _config.ConfigItem(
        10, 'Number of ATT&CK techniques kept per CVE when building traces.')
    control_top_m = _config.ConfigItem(
        10, 'Number of controls kept per technique when building traces.')
    nvd_sample_size = _config.ConfigItem(
        500, 'Number of NVD descriptions added to the Stage 3 TF-IDF corpus.')
    split_seed = _config.ConfigItem(
        42, 'Seed for grouped train/test splits.')
    split_test_fraction = _config.ConfigItem(
        0.2, 'Fraction of groups held out for testing.')
    hist_clip_percentile = _config.ConfigItem(
        99.0, 'Percentile above which priorities are clipped in histograms.')
    hist_bins = _config.ConfigItem(
        50, 'Number of equal-width histogram bins.')
    llm_url_env = _config.ConfigItem(
        'CONTROLTRACE_LLM_URL',
        'Environment variable holding the chat-completion endpoint URL.')
    llm_timeout = _config.ConfigItem(
        60.0, 'Timeout in seconds for LLM endpoint requests.')
    llm_max_predictions = _config.ConfigItem(
        5, 'Maximum number of techniques accepted from an LLM response.')


conf = Conf()

from .cpe import CpeIdentifier, normalize_cpe, parse_cpe  # noqa
from .sysml import Component, ComponentRegistry, parse_sysml  # noqa
from .vulnstore import CveRecord, VulnStore, version_compare  # noqa
from .knowledge import KnowledgeBase, clean_text, collapse_to_parent  # noqa
from .retrieval import (RankedList, fit_tfidf, load_external_scores,  # noqa
                        rank_from_external, score_query, tokenize)
from .mapping import (ScoredControl, aggregate_max_cvss,  # noqa
                      compute_priority, map_cve_to_techniques,
                      recommend_controls)
from .llm import build_llm_prompt, parse_llm_response  # noqa
from .report import assemble_traces, emit_report, priority_histogram  # noqa
