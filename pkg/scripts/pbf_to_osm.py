"""Convert an OSM PBF extract into the OSM XML subset the map parser reads.

Keeps drivable highway ways, the nodes they reference and restriction
relations. Needs ``pyosmium`` (``pip install osmium``), which the package
itself does not depend on.

    python scripts/pbf_to_osm.py input.osm.pbf output.osm
"""
import sys
from xml.sax.saxutils import quoteattr

import osmium

DRIVABLE = {
    "motorway", "motorway_link", "trunk", "trunk_link", "primary", "primary_link",
    "secondary", "secondary_link", "tertiary", "tertiary_link", "unclassified",
    "residential", "living_street", "service", "road",
}
MEMBER_TYPES = {"n": "node", "w": "way", "r": "relation"}
KEEP_TAGS = {"highway", "oneway", "maxspeed", "lanes", "junction", "restriction", "type", "name"}


class Collector(osmium.SimpleHandler):
    def __init__(self):
        super().__init__()
        self.ways = []
        self.relations = []
        self.wanted = set()

    def way(self, w):
        if w.tags.get("highway") not in DRIVABLE:
            return
        refs = [n.ref for n in w.nodes]
        tags = {t.k: t.v for t in w.tags if t.k in KEEP_TAGS}
        self.ways.append((w.id, refs, tags))
        self.wanted.update(refs)

    def relation(self, r):
        if r.tags.get("type") != "restriction":
            return
        members = [(MEMBER_TYPES.get(m.type, m.type), m.ref, m.role) for m in r.members]
        tags = {t.k: t.v for t in r.tags if t.k in KEEP_TAGS}
        self.relations.append((r.id, members, tags))


class NodeCollector(osmium.SimpleHandler):
    def __init__(self, wanted):
        super().__init__()
        self.wanted = wanted
        self.nodes = {}

    def node(self, n):
        if n.id in self.wanted and n.location.valid():
            self.nodes[n.id] = (n.location.lat, n.location.lon)


def main(src, dst):
    c = Collector()
    c.apply_file(src)
    nc = NodeCollector(c.wanted)
    nc.apply_file(src)
    with open(dst, "w", encoding="utf-8") as out:
        out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
        out.write('<osm version="0.6" generator="pbf_to_osm.py">\n')
        for nid in sorted(nc.nodes):
            lat, lon = nc.nodes[nid]
            out.write(f'  <node id="{nid}" lat="{lat:.7f}" lon="{lon:.7f}"/>\n')
        for wid, refs, tags in sorted(c.ways):
            out.write(f'  <way id="{wid}">\n')
            for ref in refs:
                out.write(f'    <nd ref="{ref}"/>\n')
            for k, v in sorted(tags.items()):
                out.write(f"    <tag k={quoteattr(k)} v={quoteattr(v)}/>\n")
            out.write("  </way>\n")
        for rid, members, tags in sorted(c.relations):
            out.write(f'  <relation id="{rid}">\n')
            for typ, ref, role in members:
                out.write(f"    <member type={quoteattr(typ)} ref=\"{ref}\" role={quoteattr(role)}/>\n")
            for k, v in sorted(tags.items()):
                out.write(f"    <tag k={quoteattr(k)} v={quoteattr(v)}/>\n")
            out.write("  </relation>\n")
        out.write("</osm>\n")
    print(f"{len(nc.nodes)} nodes, {len(c.ways)} ways, {len(c.relations)} restrictions -> {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
