"""PNML (place/transition core model, 2009 grammar) export and checks."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

from .errors import ExportError
from .petri import PetriNet, id_key

PNML_NS = "http://www.pnml.org/version-2009/grammar/pnml"
PTNET_TYPE = "http://www.pnml.org/version-2009/grammar/ptnet"
X_STEP, Y_STEP = 100, 80

_ID = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")


def _check_id(node_id: str) -> str:
    if not _ID.match(node_id):
        raise ExportError(f"node id {node_id!r} is not a legal XML id")
    return quoteattr(node_id)


def layout(net: PetriNet, start: str | None = None) -> dict[str, tuple[int, int]]:
    """Layered positions: layer is the BFS depth from ``start`` along arcs.

    Nodes not reachable from ``start`` go into one extra layer after the
    deepest one.  Within a layer nodes are stacked in id order.
    """
    succ: dict[str, list[str]] = {}
    for a in net.arcs:
        succ.setdefault(a.source, []).append(a.target)
    depth: dict[str, int] = {}
    if start is not None:
        depth[start] = 0
        queue = deque([start])
        while queue:
            n = queue.popleft()
            for m in sorted(succ.get(n, ()), key=id_key):
                if m not in depth:
                    depth[m] = depth[n] + 1
                    queue.append(m)
    spill = max(depth.values(), default=-1) + 1
    nodes = [p.id for p in net.places] + [t.id for t in net.transitions]
    layers: dict[int, list[str]] = {}
    for n in nodes:
        layers.setdefault(depth.get(n, spill), []).append(n)
    pos = {}
    for layer, members in layers.items():
        for i, n in enumerate(sorted(members, key=id_key)):
            pos[n] = (X_STEP * layer, Y_STEP * i)
    return pos


def export_pnml(net: PetriNet, index=None, net_id: str = "net0") -> str:
    """Serialize ``net``; names come from ``index`` (a NetIndex) when given."""
    names = index.names if index is not None else {}
    start = index.start if index is not None else None
    if start is None:
        start = next((p.id for p in net.places if p.tokens), None)
    pos = layout(net, start)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<pnml xmlns="{PNML_NS}">',
        f"  <net id={_check_id(net_id)} type=\"{PTNET_TYPE}\">",
    ]
    body: list[str] = []
    ind = "      "

    def node(tag: str, nid: str, extra: list[str]) -> None:
        x, y = pos[nid]
        body.append(f"{ind}<{tag} id={_check_id(nid)}>")
        body.append(f"{ind}  <name><text>{escape(names.get(nid, nid))}</text></name>")
        body.append(f'{ind}  <graphics><position x="{x}" y="{y}"/></graphics>')
        body.extend(f"{ind}  {e}" for e in extra)
        body.append(f"{ind}</{tag}>")

    for p in sorted(net.places, key=lambda p: id_key(p.id)):
        extra = [f"<initialMarking><text>{p.tokens}</text></initialMarking>"] if p.tokens else []
        node("place", p.id, extra)
    for t in sorted(net.transitions, key=lambda t: id_key(t.id)):
        node("transition", t.id, [])
    arcs = sorted(net.arcs, key=lambda a: (id_key(a.source), id_key(a.target)))
    for i, a in enumerate(arcs):
        head = f"{ind}<arc id=\"a{i}\" source={_check_id(a.source)} target={_check_id(a.target)}"
        if a.weight == 1:
            body.append(head + "/>")
        else:
            body.append(head + ">")
            body.append(f"{ind}  <inscription><text>{a.weight}</text></inscription>")
            body.append(f"{ind}</arc>")
    if body:
        lines.append('    <page id="page0">')
        lines.extend(body)
        lines.append("    </page>")
    else:
        lines.append('    <page id="page0"/>')
    lines += ["  </net>", "</pnml>"]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PnmlSummary:
    places: dict[str, int]
    transitions: tuple[str, ...]
    arcs: tuple[tuple[str, str, int], ...]


def read_pnml_structure(text: str) -> PnmlSummary:
    """Strictly re-parse an exported document and check its structure.

    Raises ExportError if an id repeats, an arc names a missing node, or an
    arc does not join a place and a transition.
    """
    try:
        root = ET.fromstring(text.encode("utf-8"))
    except ET.ParseError as exc:
        raise ExportError(f"malformed PNML: {exc}") from None
    ns = {"p": PNML_NS}
    nets = root.findall("p:net", ns)
    if root.tag != f"{{{PNML_NS}}}pnml" or len(nets) != 1:
        raise ExportError("expected a <pnml> root holding exactly one <net>")
    if nets[0].get("type") != PTNET_TYPE:
        raise ExportError(f"unexpected net type {nets[0].get('type')!r}")
    pages = nets[0].findall("p:page", ns)
    if len(pages) != 1:
        raise ExportError("expected exactly one <page>")
    page = pages[0]
    places: dict[str, int] = {}
    transitions: list[str] = []
    seen: set[str] = set()
    for el in page:
        nid = el.get("id", "")
        if nid in seen:
            raise ExportError(f"duplicate id {nid!r}")
        seen.add(nid)
        if el.tag == f"{{{PNML_NS}}}place":
            text_el = el.find("p:initialMarking/p:text", ns)
            places[nid] = int(text_el.text) if text_el is not None else 0
        elif el.tag == f"{{{PNML_NS}}}transition":
            transitions.append(nid)
    arcs = []
    for el in page.findall("p:arc", ns):
        src, dst = el.get("source"), el.get("target")
        if src not in seen or dst not in seen:
            raise ExportError(f"arc {el.get('id')} references a missing node")
        if (src in places) == (dst in places):
            raise ExportError(f"arc {el.get('id')} does not join a place and a transition")
        w = el.find("p:inscription/p:text", ns)
        arcs.append((src, dst, int(w.text) if w is not None else 1))
    return PnmlSummary(places, tuple(transitions), tuple(arcs))
