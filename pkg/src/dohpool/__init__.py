"""Trustworthy server-address pools from several DNS-over-HTTPS resolvers.

Each resolver's answer list is cut to the length of the shortest one and the
lists are interleaved, so no resolver outweighs another in the pool.
"""

from .codec import AddressRecord, DnsMessage, Name, Question, RCode, RRType, decode_message, encode_message
from .combine import AddressPool, CombineInput, EmptyPool, InsufficientResponders, combine_pool, majority_vote, pool_to_answers
from .doh import ResolverEndpoint, ResolverResponse, build_doh_request, query
from .security import (
    ThreatParams,
    attack_probability_exact,
    attack_probability_montecarlo,
    attack_probability_paper,
    min_compromised_resolvers,
    security_curve,
)

__version__ = "0.1.0"
