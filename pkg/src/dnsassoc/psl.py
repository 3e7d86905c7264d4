"""Registered-domain (2LD) and 3LD lookup against a public suffix rule file."""
from __future__ import annotations

import logging
from functools import lru_cache
from importlib import resources

log = logging.getLogger(__name__)


class PublicSuffixList:
    """Rules in the publicsuffix.org format: plain, ``*.`` wildcard, ``!`` exception.

    A name with no matching rule is its own registered domain (the implicit
    ``*`` rule is deliberately not applied, so unknown TLDs are visible).
    """

    def __init__(self, rules):
        self.rules = set()
        self.wildcards = set()
        self.exceptions = set()
        for line in rules:
            line = line.strip()
            if not line or line.startswith("//"):
                continue
            rule = line.split()[0].lower()
            if rule.startswith("!"):
                self.exceptions.add(rule[1:])
            elif rule.startswith("*."):
                self.wildcards.add(rule[2:])
            else:
                self.rules.add(rule)
        self.unmatched = 0

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    @classmethod
    def bundled(cls):
        return _bundled()

    def suffix_len(self, labels):
        """Number of trailing labels forming the public suffix; 0 when none match."""
        n = len(labels)
        best = 0
        for i in range(n):
            cand = ".".join(labels[i:])
            k = n - i
            if cand in self.exceptions:
                return k - 1
            if cand in self.rules:
                best = max(best, k)
            if i + 1 < n and ".".join(labels[i + 1:]) in self.wildcards:
                best = max(best, k)
        return best

    def split(self, fqdn):
        """Return (2LD, 3LD or None) for a normalized domain name."""
        labels = fqdn.split(".")
        k = self.suffix_len(labels)
        if k == 0 or k >= len(labels):
            self.unmatched += 1
            log.debug("no registrable suffix for %s; using it as its own 2LD", fqdn)
            return fqdn, None
        sld = ".".join(labels[-(k + 1):])
        tld3 = ".".join(labels[-(k + 2):]) if len(labels) >= k + 2 else None
        return sld, tld3

    def registered_domain(self, fqdn):
        return self.split(fqdn)[0]


@lru_cache(maxsize=1)
def _bundled():
    with resources.files("dnsassoc").joinpath("data/public_suffix_list.dat").open(encoding="utf-8") as fh:
        return PublicSuffixList(fh)
