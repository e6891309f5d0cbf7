#pragma once

#include <compare>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sidb {

// A surface site on the H-Si(100)-2x1 dimer lattice.
struct LatticeSite {
    int col = 0;
    int row = 0;
    int sub = 0;  // 0 or 1, which atom of the dimer

    // Canonical order: (row, col, sub).
    friend constexpr std::strong_ordering operator<=>(const LatticeSite& a, const LatticeSite& b) {
        if (auto c = a.row <=> b.row; c != 0) return c;
        if (auto c = a.col <=> b.col; c != 0) return c;
        return a.sub <=> b.sub;
    }
    friend constexpr bool operator==(const LatticeSite&, const LatticeSite&) = default;

    // Index of the horizontal line of atoms this site sits on (2*row + sub).
    [[nodiscard]] constexpr int line() const { return 2 * row + sub; }
    [[nodiscard]] static constexpr LatticeSite from_line(int col, int line) {
        const int row = line >= 0 ? line / 2 : -((-line + 1) / 2);
        return LatticeSite{col, row, line - 2 * row};
    }

    [[nodiscard]] std::string to_string() const;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct LatticeGeometry {
    double a_col = 3.84;            // Angstrom, along a dimer row
    double a_row = 7.68;            // Angstrom, between dimer rows
    double d_dimer = 2.25;          // Angstrom, within a dimer
    double adjacency_cutoff = 4.0;  // Angstrom

    // Throws std::invalid_argument when the invariants do not hold.
    void validate() const;

    friend bool operator==(const LatticeGeometry&, const LatticeGeometry&) = default;
};

[[nodiscard]] Point2 to_physical(const LatticeSite& site, const LatticeGeometry& geom = {});
[[nodiscard]] double distance(const LatticeSite& a, const LatticeSite& b, const LatticeGeometry& geom = {});

// Requires a != b (throws std::invalid_argument otherwise).
[[nodiscard]] bool is_adjacent(const LatticeSite& a, const LatticeSite& b, const LatticeGeometry& geom = {});

// A set of occupied sites, kept in canonical order.
class DBLayout {
  public:
    DBLayout() = default;

    // Sorts and rejects duplicates. With enforce_spacing, also rejects adjacent pairs.
    explicit DBLayout(std::vector<LatticeSite> sites, bool enforce_spacing = false,
                      const LatticeGeometry& geom = {});
    DBLayout(std::initializer_list<LatticeSite> sites);

    [[nodiscard]] std::span<const LatticeSite> sites() const { return sites_; }
    [[nodiscard]] std::size_t size() const { return sites_.size(); }
    [[nodiscard]] bool empty() const { return sites_.empty(); }
    [[nodiscard]] bool contains(const LatticeSite& s) const;
    // Position of s in canonical order, or size() when absent.
    [[nodiscard]] std::size_t index_of(const LatticeSite& s) const;

    // Returns a copy with s inserted (throws if already present).
    [[nodiscard]] DBLayout with(const LatticeSite& s) const;
    [[nodiscard]] DBLayout merged(const DBLayout& other) const;

    // True iff any two sites are adjacent.
    [[nodiscard]] bool has_adjacent_pair(const LatticeGeometry& geom = {}) const;

    auto begin() const { return sites_.begin(); }
    auto end() const { return sites_.end(); }

    friend bool operator==(const DBLayout&, const DBLayout&) = default;

  private:
    std::vector<LatticeSite> sites_;
};

}  // namespace sidb
