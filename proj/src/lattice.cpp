#include "sidb/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sidb {

std::string LatticeSite::to_string() const {
    return "(" + std::to_string(col) + "," + std::to_string(row) + "," + std::to_string(sub) + ")";
}

void LatticeGeometry::validate() const {
    if (!(a_col > 0.0 && a_row > 0.0 && d_dimer > 0.0 && adjacency_cutoff > 0.0)) {
        throw std::invalid_argument("lattice lengths must be strictly positive");
    }
    if (!(d_dimer < a_col && a_col < a_row)) {
        throw std::invalid_argument("lattice geometry requires d_dimer < a_col < a_row");
    }
    if (!(adjacency_cutoff > d_dimer)) {
        throw std::invalid_argument("adjacency cutoff must exceed the dimer spacing");
    }
}

Point2 to_physical(const LatticeSite& site, const LatticeGeometry& geom) {
    return {site.col * geom.a_col, site.row * geom.a_row + site.sub * geom.d_dimer};
}

double distance(const LatticeSite& a, const LatticeSite& b, const LatticeGeometry& geom) {
    const auto pa = to_physical(a, geom);
    const auto pb = to_physical(b, geom);
    return std::hypot(pa.x - pb.x, pa.y - pb.y);
}

bool is_adjacent(const LatticeSite& a, const LatticeSite& b, const LatticeGeometry& geom) {
    if (a == b) throw std::invalid_argument("is_adjacent called with identical sites " + a.to_string());
    return distance(a, b, geom) < geom.adjacency_cutoff;
}

DBLayout::DBLayout(std::vector<LatticeSite> sites, bool enforce_spacing, const LatticeGeometry& geom)
    : sites_(std::move(sites)) {
    for (const auto& s : sites_) {
        if (s.sub != 0 && s.sub != 1) throw std::invalid_argument("site sub index must be 0 or 1: " + s.to_string());
    }
    std::sort(sites_.begin(), sites_.end());
    if (auto it = std::adjacent_find(sites_.begin(), sites_.end()); it != sites_.end()) {
        throw std::invalid_argument("duplicate site in layout: " + it->to_string());
    }
    if (enforce_spacing && has_adjacent_pair(geom)) {
        throw std::invalid_argument("layout contains adjacent sites");
    }
}

DBLayout::DBLayout(std::initializer_list<LatticeSite> sites) : DBLayout(std::vector<LatticeSite>(sites)) {}

bool DBLayout::contains(const LatticeSite& s) const { return std::binary_search(sites_.begin(), sites_.end(), s); }

std::size_t DBLayout::index_of(const LatticeSite& s) const {
    auto it = std::lower_bound(sites_.begin(), sites_.end(), s);
    if (it == sites_.end() || *it != s) return sites_.size();
    return static_cast<std::size_t>(it - sites_.begin());
}

DBLayout DBLayout::with(const LatticeSite& s) const {
    auto it = std::lower_bound(sites_.begin(), sites_.end(), s);
    if (it != sites_.end() && *it == s) throw std::invalid_argument("site already occupied: " + s.to_string());
    DBLayout out = *this;
    out.sites_.insert(out.sites_.begin() + (it - sites_.begin()), s);
    return out;
}

DBLayout DBLayout::merged(const DBLayout& other) const {
    std::vector<LatticeSite> all;
    all.reserve(sites_.size() + other.sites_.size());
    std::merge(sites_.begin(), sites_.end(), other.sites_.begin(), other.sites_.end(), std::back_inserter(all));
    if (auto it = std::adjacent_find(all.begin(), all.end()); it != all.end()) {
        throw std::invalid_argument("layouts overlap at " + it->to_string());
    }
    DBLayout out;
    out.sites_ = std::move(all);
    return out;
}

bool DBLayout::has_adjacent_pair(const LatticeGeometry& geom) const {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
        for (std::size_t j = i + 1; j < sites_.size(); ++j) {
            if (is_adjacent(sites_[i], sites_[j], geom)) return true;
        }
    }
    return false;
}

}  // namespace sidb
