from privmech.simharness.estimates import EstimateRecord, MCSummary, ratio_record, run_mc
from privmech.simharness.rng import derive_substream

__all__ = ["EstimateRecord", "MCSummary", "derive_substream", "ratio_record", "run_mc"]
