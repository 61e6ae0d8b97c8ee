"""Passive DNS log ingestion.

Parses line-oriented query logs, aggregates FQDNs to effective second-level
domains (e2LDs) and IPs to BGP-style prefixes, applies the pruning and
label-derivation rules, and produces an indexed entity catalog with a
temporal train/test split.
"""

from __future__ import annotations

import dataclasses
import ipaddress
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    DegenerateInputError,
    FormatError,
)

LOG_FIELDS = ("timestamp", "host", "domain", "ip")


@dataclass(frozen=True, slots=True)
class QueryRecord:
    """One DNS query: host queried domain at timestamp, resolved to ip.

    After aggregation the domain is an e2LD and the ip is a CIDR prefix
    string; raw records carry an FQDN and a dotted-quad address.
    """

    timestamp: int
    host: str
    domain: str
    ip: str


@dataclass
class QueryLog:
    """Ordered query records plus the count of malformed lines skipped."""

    records: list[QueryRecord] = field(default_factory=list)
    skipped: int = 0

    def __iter__(self) -> Iterator[QueryRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class LogFormat:
    """Field-order descriptor for delimiter-separated query logs."""

    fields: tuple[str, ...] = LOG_FIELDS
    delimiter: str = "\t"

    def __post_init__(self) -> None:
        if sorted(self.fields) != sorted(LOG_FIELDS):
            raise ConfigError(
                f"log format must name exactly the fields {LOG_FIELDS}, got {self.fields}"
            )


@dataclass(frozen=True)
class SuffixList:
    """Public suffixes used for e2LD extraction, e.g. {"com", "com.cn"}."""

    suffixes: frozenset[str]

    def __post_init__(self) -> None:
        if not self.suffixes:
            raise ConfigError("suffix list is empty")
        for s in self.suffixes:
            if not s or s != s.lower().strip(".") or ".." in s:
                raise ConfigError(f"invalid public suffix: {s!r}")


@dataclass(frozen=True)
class PrefixTable:
    """CIDR prefixes for longest-prefix aggregation of IPs.

    IPs matching no entry are masked to `fallback_mask`.
    """

    networks: tuple[ipaddress.IPv4Network, ...]
    fallback_mask: int = 24

    def __post_init__(self) -> None:
        if not 8 <= self.fallback_mask <= 32:
            raise ConfigError(f"fallback mask {self.fallback_mask} outside [8, 32]")
        for net in self.networks:
            if not 8 <= net.prefixlen <= 32:
                raise ConfigError(f"prefix {net} has mask length outside [8, 32]")


@dataclass
class EntityCatalog:
    """Indexed domains, IPs, and hosts with labels and split masks.

    Row convention used everywhere downstream: domain i is row i, ip j is
    row n_domains + j. Labels are 0/1 (benign/malicious for domains,
    normal/poor for IPs) or None when unknown.
    """

    domains: list[str]
    ips: list[str]
    hosts: list[str]
    domain_labels: list[int | None]
    ip_labels: list[int | None]
    first_seen: np.ndarray
    train_mask: np.ndarray | None = None

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_ips(self) -> int:
        return len(self.ips)

    @property
    def n_entities(self) -> int:
        return len(self.domains) + len(self.ips)

    @property
    def domain_index(self) -> dict[str, int]:
        if "_domain_index" not in self.__dict__:
            self.__dict__["_domain_index"] = {d: i for i, d in enumerate(self.domains)}
        return self.__dict__["_domain_index"]

    @property
    def ip_index(self) -> dict[str, int]:
        if "_ip_index" not in self.__dict__:
            self.__dict__["_ip_index"] = {p: j for j, p in enumerate(self.ips)}
        return self.__dict__["_ip_index"]

    def row_of(self, entity: str) -> int:
        """Global row index of a domain or ip; raises on unknown entities."""
        if entity in self.domain_index:
            return self.domain_index[entity]
        if entity in self.ip_index:
            return self.n_domains + self.ip_index[entity]
        raise DataError(f"unknown entity: {entity!r}")

    def entity_at(self, row: int) -> tuple[str, str]:
        """(name, kind) at a global row; kind is 'D' or 'I'."""
        if 0 <= row < self.n_domains:
            return self.domains[row], "D"
        if self.n_domains <= row < self.n_entities:
            return self.ips[row - self.n_domains], "I"
        raise DataError(f"row {row} outside catalog of size {self.n_entities}")

    def label_vector(self) -> np.ndarray:
        """Labels as a float vector of length N+M with NaN for unlabeled."""
        out = np.full(self.n_entities, np.nan)
        for i, g in enumerate(self.domain_labels):
            if g is not None:
                out[i] = g
        for j, g in enumerate(self.ip_labels):
            if g is not None:
                out[self.n_domains + j] = g
        return out

    def require_train_mask(self) -> np.ndarray:
        if self.train_mask is None:
            raise DataError("catalog has no train/test split; run temporal_split first")
        return self.train_mask


def parse_passive_log(stream: Iterable[str], fmt: LogFormat | None = None) -> QueryLog:
    """Parse a line-oriented passive DNS log.

    Lines starting with '#' and blank lines are ignored. Malformed lines
    are skipped and counted; if more than half of the data lines are
    malformed the field descriptor is presumed wrong and a FormatError is
    raised.
    """
    fmt = fmt or LogFormat()
    pos = {name: i for i, name in enumerate(fmt.fields)}
    records: list[QueryRecord] = []
    skipped = 0
    total = 0
    for line in stream:
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        total += 1
        parts = line.split(fmt.delimiter)
        if len(parts) < len(fmt.fields):
            skipped += 1
            continue
        try:
            ts = int(parts[pos["timestamp"]])
            host = parts[pos["host"]].strip()
            domain = parts[pos["domain"]].strip().lower().rstrip(".")
            ip = parts[pos["ip"]].strip()
            if ts < 0 or not host or not domain:
                raise ValueError
            _check_ip_field(ip)
        except ValueError:
            skipped += 1
            continue
        records.append(QueryRecord(ts, host, domain, ip))
    if total and skipped * 2 > total:
        raise FormatError(
            f"{skipped}/{total} lines malformed; wrong field order or delimiter?"
        )
    return QueryLog(records, skipped)


def _check_ip_field(ip: str) -> None:
    # Raw logs carry dotted-quad addresses; logs that were already
    # aggregated carry CIDR prefixes. Both round-trip through the parser.
    if "/" in ip:
        ipaddress.IPv4Network(ip)
    else:
        ipaddress.IPv4Address(ip)


def extract_e2ld(fqdn: str, suffixes: SuffixList) -> str:
    """Effective second-level domain: longest matching public suffix plus
    one label. Unmatched names fall back to treating the last label as the
    suffix; names that are themselves suffixes come back unchanged."""
    name = fqdn.lower().rstrip(".")
    labels = name.split(".")
    best = 1
    for k in range(1, len(labels) + 1):
        if ".".join(labels[-k:]) in suffixes.suffixes:
            best = k
    if best >= len(labels):
        return name
    return ".".join(labels[-(best + 1):])


def extract_prefix(ip: str, table: PrefixTable) -> str:
    """Longest-prefix match against the table; unmatched IPs are masked to
    the table's fallback length. Returns canonical "a.b.c.d/len" form."""
    try:
        addr = ipaddress.IPv4Address(ip)
    except (ipaddress.AddressValueError, ValueError) as exc:
        raise DataError(f"unparseable IPv4 address: {ip!r}") from exc
    best: ipaddress.IPv4Network | None = None
    for net in table.networks:
        if addr in net and (best is None or net.prefixlen > best.prefixlen):
            best = net
    if best is not None:
        return str(best)
    return str(ipaddress.ip_network((ip, table.fallback_mask), strict=False))


def aggregate(log: QueryLog, suffixes: SuffixList, table: PrefixTable) -> QueryLog:
    """Rewrite every record to e2LD / prefix granularity.

    Idempotent: records whose ip field is already a prefix are left alone,
    and e2LD extraction is a fixed point on e2LDs.
    """
    e2ld_cache: dict[str, str] = {}
    prefix_cache: dict[str, str] = {}
    out: list[QueryRecord] = []
    for rec in log.records:
        dom = e2ld_cache.get(rec.domain)
        if dom is None:
            dom = e2ld_cache[rec.domain] = extract_e2ld(rec.domain, suffixes)
        if "/" in rec.ip:
            pref = rec.ip
        else:
            pref = prefix_cache.get(rec.ip)
            if pref is None:
                pref = prefix_cache[rec.ip] = extract_prefix(rec.ip, table)
        out.append(QueryRecord(rec.timestamp, rec.host, dom, pref))
    return QueryLog(out, log.skipped)


def derive_prefix_labels(
    ip_labels: Mapping[str, int], table: PrefixTable
) -> dict[str, int]:
    """Roll per-IP labels up to prefixes by strict majority.

    A prefix is poor (1) iff strictly more than half of its labeled member
    IPs are poor, normal (0) iff strictly more than half are normal; exact
    ties are omitted.
    """
    members: dict[str, list[int]] = defaultdict(list)
    for ip, g in ip_labels.items():
        members[extract_prefix(ip, table)].append(int(g))
    out: dict[str, int] = {}
    for prefix, gs in members.items():
        poor = sum(gs)
        if 2 * poor > len(gs):
            out[prefix] = 1
        elif 2 * poor < len(gs):
            out[prefix] = 0
    return out


def prune_and_label(
    log: QueryLog,
    domain_labels: Mapping[str, int],
    ip_labels: Mapping[str, int],
    popular: frozenset[str] | set[str] = frozenset(),
) -> EntityCatalog:
    """Apply the retention rules to an aggregated log and build the catalog.

    Domains are dropped when popular, queried by more than half of all
    hosts, queried by fewer than two distinct hosts, or unlabeled; IPs are
    dropped when unlabeled. Host counts are taken on the full aggregated
    log, before any removal. Entities are indexed in order of first
    appearance among the retained records.
    """
    hosts_per_domain: dict[str, set[str]] = defaultdict(set)
    all_hosts: set[str] = set()
    for rec in log.records:
        hosts_per_domain[rec.domain].add(rec.host)
        all_hosts.add(rec.host)
    half = 0.5 * len(all_hosts)

    def keep_domain(d: str) -> bool:
        nh = len(hosts_per_domain[d])
        return d not in popular and 2 <= nh <= half and d in domain_labels

    keep_d = {d for d in hosts_per_domain if keep_domain(d)}
    keep_i = {rec.ip for rec in log.records} & set(ip_labels)

    domains: list[str] = []
    ips: list[str] = []
    hosts: list[str] = []
    dom_pos: dict[str, int] = {}
    ip_pos: dict[str, int] = {}
    host_pos: dict[str, int] = {}
    first_d: list[int] = []
    first_i: list[int] = []
    for rec in log.records:
        if rec.domain not in keep_d or rec.ip not in keep_i:
            continue
        if rec.domain not in dom_pos:
            dom_pos[rec.domain] = len(domains)
            domains.append(rec.domain)
            first_d.append(rec.timestamp)
        else:
            k = dom_pos[rec.domain]
            first_d[k] = min(first_d[k], rec.timestamp)
        if rec.ip not in ip_pos:
            ip_pos[rec.ip] = len(ips)
            ips.append(rec.ip)
            first_i.append(rec.timestamp)
        else:
            k = ip_pos[rec.ip]
            first_i[k] = min(first_i[k], rec.timestamp)
        if rec.host not in host_pos:
            host_pos[rec.host] = len(hosts)
            hosts.append(rec.host)
    if not domains or not ips:
        raise DegenerateInputError(
            f"pruning left {len(domains)} domains and {len(ips)} ips; "
            "check labels and pruning thresholds"
        )
    return EntityCatalog(
        domains=domains,
        ips=ips,
        hosts=hosts,
        domain_labels=[int(domain_labels[d]) for d in domains],
        ip_labels=[int(ip_labels[p]) for p in ips],
        first_seen=np.array(first_d + first_i, dtype=np.int64),
    )


def restrict_log(log: QueryLog, catalog: EntityCatalog) -> QueryLog:
    """Drop records that touch entities absent from the catalog."""
    di, ii = catalog.domain_index, catalog.ip_index
    kept = [r for r in log.records if r.domain in di and r.ip in ii]
    return QueryLog(kept, log.skipped)


def temporal_split(catalog: EntityCatalog, fraction: float) -> EntityCatalog:
    """Mark the earliest-seen ceil(fraction * count) domains and IPs as the
    training set, independently per entity type. Ties on first_seen break
    by catalog index."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction {fraction} outside (0, 1)")
    n, m = catalog.n_domains, catalog.n_ips
    mask = np.zeros(n + m, dtype=bool)
    for offset, count in ((0, n), (n, m)):
        seen = catalog.first_seen[offset:offset + count]
        order = np.lexsort((np.arange(count), seen))
        n_train = math.ceil(fraction * count)
        mask[offset + order[:n_train]] = True
    return dataclasses.replace(catalog, train_mask=mask)


# ---------------------------------------------------------------------------
# file formats


def load_log(path: str, fmt: LogFormat | None = None) -> QueryLog:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_passive_log(fh, fmt)


def write_log(path: str, log: QueryLog, fmt: LogFormat | None = None) -> None:
    fmt = fmt or LogFormat()
    with open(path, "w", encoding="utf-8") as fh:
        for rec in log.records:
            vals = {"timestamp": str(rec.timestamp), "host": rec.host,
                    "domain": rec.domain, "ip": rec.ip}
            fh.write(fmt.delimiter.join(vals[f] for f in fmt.fields) + "\n")


def load_labels(path: str) -> dict[str, int]:
    """Label file: one `<entity>\\t<0|1>` per line; '#' comments allowed."""
    out: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: expected '<entity>\\t<0|1>'")
            out[parts[0].strip().lower()] = int(parts[1])
    return out


def write_labels(path: str, labels: Mapping[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity, g in labels.items():
            fh.write(f"{entity}\t{int(g)}\n")


def _read_list(path: str) -> list[str]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(line)
    return out


def load_suffix_list(path: str) -> SuffixList:
    return SuffixList(frozenset(s.lower() for s in _read_list(path)))


def load_prefix_table(path: str, fallback_mask: int = 24) -> PrefixTable:
    nets = []
    for lineno, line in enumerate(_read_list(path), 1):
        try:
            nets.append(ipaddress.IPv4Network(line))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad CIDR {line!r}") from exc
    return PrefixTable(tuple(nets), fallback_mask=fallback_mask)


def load_domain_set(path: str) -> frozenset[str]:
    """Popular-domain list: one e2LD per line; empty file allowed."""
    return frozenset(d.lower() for d in _read_list(path))
