#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <istream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fpscreen/elements.hpp"
#include "fpscreen/fingerprint.hpp"

namespace fpscreen {

struct Atom {
    std::string element;
    int atomic_number = 0;
    bool isotope_flag = false;
};

/// Atom indices are 1-based as in the connection table. `order` holds the raw
/// V2000 bond type: 1..3 for single/double/triple, 4..8 for aromatic and
/// query bond types, which only matter here as "a bond exists".
struct Bond {
    std::size_t a1 = 0;
    std::size_t a2 = 0;
    int order = 1;
};

struct Molecule {
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;
    std::string name;
};

enum class MolfileErrc {
    unsupported_version,
    malformed_counts_line,
    malformed_line,
    unknown_element,
    atom_index_out_of_range,
    truncated_block,
};

class MolfileError : public std::runtime_error {
public:
    MolfileError(MolfileErrc code, std::size_t line, const std::string& message)
        : std::runtime_error("line " + std::to_string(line) + ": " + message),
          code_(code),
          line_(line) {}

    MolfileErrc code() const noexcept { return code_; }
    std::size_t line() const noexcept { return line_; }

private:
    MolfileErrc code_;
    std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string_view column(std::string_view line, std::size_t first, std::size_t width) {
    if (first >= line.size()) return {};
    return line.substr(first, width);
}

/// Fixed-width integer field; blank fields read as `blank`.
inline std::optional<int> int_field(std::string_view field, int blank = 0) {
    field = trim(field);
    if (field.empty()) return blank;
    int value = 0;
    if (field.front() == '+') field.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) return std::nullopt;
    return value;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace detail

/// Parses one V2000 connection table (a molfile, or one SDF record up to
/// "M  END"). Line numbers in errors are 1-based within `text`.
inline Molecule parse_molfile(std::string_view text) {
    using detail::column;
    using detail::int_field;
    const auto lines = detail::split_lines(text);

    Molecule mol;
    if (lines.size() < 4) {
        throw MolfileError(MolfileErrc::truncated_block, lines.size() + 1,
                           "header block needs 3 lines plus a counts line");
    }
    mol.name = std::string(detail::trim(lines[0]));

    const std::string_view counts = lines[3];
    const auto version = detail::trim(column(counts, 34, 5));
    if (version == "V3000") {
        throw MolfileError(MolfileErrc::unsupported_version, 4, "V3000 connection tables are not supported");
    }
    if (!version.empty() && version != "V2000") {
        throw MolfileError(MolfileErrc::malformed_counts_line, 4,
                           "unexpected version tag '" + std::string(version) + "'");
    }
    const auto atom_count = int_field(column(counts, 0, 3), -1);
    const auto bond_count = int_field(column(counts, 3, 3), -1);
    if (!atom_count || !bond_count || *atom_count < 0 || *bond_count < 0) {
        throw MolfileError(MolfileErrc::malformed_counts_line, 4, "counts line needs atom and bond counts");
    }

    const std::size_t n_atoms = static_cast<std::size_t>(*atom_count);
    const std::size_t n_bonds = static_cast<std::size_t>(*bond_count);
    std::size_t idx = 4;

    mol.atoms.reserve(n_atoms);
    for (std::size_t i = 0; i < n_atoms; ++i, ++idx) {
        const std::size_t line_no = idx + 1;
        if (idx >= lines.size() || lines[idx].starts_with("M  ")) {
            throw MolfileError(MolfileErrc::truncated_block, line_no,
                               "atom block ends after " + std::to_string(i) + " of " +
                                   std::to_string(n_atoms) + " atoms");
        }
        const auto line = lines[idx];
        const auto sym = detail::trim(column(line, 31, 3));
        if (line.size() < 32 || sym.empty()) {
            throw MolfileError(MolfileErrc::malformed_line, line_no, "atom line lacks an element symbol");
        }
        Atom atom;
        if (sym == "D" || sym == "T") {
            atom.element = "H";
            atom.atomic_number = 1;
            atom.isotope_flag = true;
        } else {
            const auto z = elements::atomic_number(sym);
            if (!z) {
                throw MolfileError(MolfileErrc::unknown_element, line_no,
                                   "unknown element symbol '" + std::string(sym) + "'");
            }
            atom.element = std::string(sym);
            atom.atomic_number = *z;
        }
        const auto mass_diff = int_field(column(line, 34, 2));
        if (!mass_diff) {
            throw MolfileError(MolfileErrc::malformed_line, line_no, "bad mass difference field");
        }
        if (*mass_diff != 0) atom.isotope_flag = true;
        mol.atoms.push_back(std::move(atom));
    }

    mol.bonds.reserve(n_bonds);
    for (std::size_t i = 0; i < n_bonds; ++i, ++idx) {
        const std::size_t line_no = idx + 1;
        if (idx >= lines.size() || lines[idx].starts_with("M  ")) {
            throw MolfileError(MolfileErrc::truncated_block, line_no,
                               "bond block ends after " + std::to_string(i) + " of " +
                                   std::to_string(n_bonds) + " bonds");
        }
        const auto line = lines[idx];
        const auto a1 = int_field(column(line, 0, 3), -1);
        const auto a2 = int_field(column(line, 3, 3), -1);
        const auto type = int_field(column(line, 6, 3), -1);
        if (!a1 || !a2 || !type || *type < 1 || *type > 8) {
            throw MolfileError(MolfileErrc::malformed_line, line_no, "bond line needs two atoms and a type");
        }
        const auto in_range = [&](int a) { return a >= 1 && static_cast<std::size_t>(a) <= n_atoms; };
        if (!in_range(*a1) || !in_range(*a2) || *a1 == *a2) {
            throw MolfileError(MolfileErrc::atom_index_out_of_range, line_no,
                               "bond references atoms " + std::to_string(*a1) + " and " +
                                   std::to_string(*a2) + " with " + std::to_string(n_atoms) +
                                   " atoms declared");
        }
        mol.bonds.push_back({static_cast<std::size_t>(*a1), static_cast<std::size_t>(*a2), *type});
    }

    // Properties block. Only isotope labels matter for the implemented keys.
    for (; idx < lines.size(); ++idx) {
        const auto line = lines[idx];
        if (line.starts_with("M  END")) break;
        if (!line.starts_with("M  ISO")) continue;
        const auto tokens = detail::split_ws(line.substr(6));
        const auto count = tokens.empty() ? std::nullopt : int_field(tokens[0], -1);
        if (!count || *count < 0 || tokens.size() < 1 + 2 * static_cast<std::size_t>(*count)) {
            throw MolfileError(MolfileErrc::malformed_line, idx + 1, "malformed M  ISO line");
        }
        for (int k = 0; k < *count; ++k) {
            const auto atom = int_field(tokens[1 + 2 * static_cast<std::size_t>(k)], -1);
            if (!atom || *atom < 1 || static_cast<std::size_t>(*atom) > n_atoms) {
                throw MolfileError(MolfileErrc::atom_index_out_of_range, idx + 1,
                                   "M  ISO references a missing atom");
            }
            mol.atoms[static_cast<std::size_t>(*atom) - 1].isotope_flag = true;
        }
    }
    return mol;
}

/// Sizes of the rings in a minimum cycle basis of the bond graph.
///
/// Horton candidates (shortest path v->x, edge x-y, shortest path y->v) are
/// sorted by length and kept greedily while GF(2)-independent until the
/// basis reaches the cycle rank E - V + C. Every minimum cycle basis has the
/// same multiset of lengths, so the result does not depend on tie order.
inline std::set<std::size_t> ring_sizes(const Molecule& mol) {
    const std::size_t n = mol.atoms.size();
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_index;
    std::vector<std::vector<std::size_t>> adj(n);
    const auto edge_key = [](std::size_t a, std::size_t b) { return std::make_pair(std::min(a, b), std::max(a, b)); };
    for (const auto& b : mol.bonds) {
        const auto key = edge_key(b.a1 - 1, b.a2 - 1);
        if (edge_index.contains(key)) continue;
        edge_index.emplace(key, edges.size());
        edges.push_back(key);
        adj[key.first].push_back(key.second);
        adj[key.second].push_back(key.first);
    }

    constexpr std::size_t kUnreached = static_cast<std::size_t>(-1);
    std::vector<std::vector<std::size_t>> dist(n), parent(n);
    std::size_t components = 0;
    std::vector<bool> seen(n, false);
    for (std::size_t root = 0; root < n; ++root) {
        auto& d = dist[root];
        auto& p = parent[root];
        d.assign(n, kUnreached);
        p.assign(n, kUnreached);
        std::queue<std::size_t> frontier;
        d[root] = 0;
        frontier.push(root);
        while (!frontier.empty()) {
            const auto u = frontier.front();
            frontier.pop();
            for (auto w : adj[u]) {
                if (d[w] != kUnreached) continue;
                d[w] = d[u] + 1;
                p[w] = u;
                frontier.push(w);
            }
        }
        if (!seen[root]) {
            ++components;
            for (std::size_t v = 0; v < n; ++v)
                if (d[v] != kUnreached) seen[v] = true;
        }
    }

    if (edges.size() + components <= n) return {};
    const std::size_t rank = edges.size() + components - n;
    const std::size_t words = (edges.size() + 63) / 64;
    using EdgeSet = std::vector<std::uint64_t>;

    struct Candidate {
        std::size_t length;
        EdgeSet edges;
    };
    std::vector<Candidate> candidates;
    std::set<EdgeSet> unique;
    std::vector<std::size_t> mark(n, kUnreached);

    for (std::size_t v = 0; v < n; ++v) {
        const auto& d = dist[v];
        const auto& p = parent[v];
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto [x, y] = edges[e];
            if (d[x] == kUnreached || d[y] == kUnreached) continue;
            if (p[x] == y || p[y] == x) continue;  // tree edge, no cycle
            // Paths v->x and v->y must share only v.
            bool disjoint = true;
            for (auto u = x; u != v; u = p[u]) mark[u] = v * edges.size() + e;
            for (auto u = y; u != v; u = p[u]) {
                if (mark[u] == v * edges.size() + e) {
                    disjoint = false;
                    break;
                }
            }
            if (!disjoint) continue;

            EdgeSet set(words, 0);
            auto add_edge = [&](std::size_t a, std::size_t b) {
                const auto id = edge_index.at(edge_key(a, b));
                set[id / 64] |= std::uint64_t{1} << (id % 64);
            };
            for (auto u = x; u != v; u = p[u]) add_edge(u, p[u]);
            for (auto u = y; u != v; u = p[u]) add_edge(u, p[u]);
            add_edge(x, y);
            if (!unique.insert(set).second) continue;
            candidates.push_back({d[x] + d[y] + 1, std::move(set)});
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.length < b.length; });

    // Incremental GF(2) elimination; basis rows are kept reduced by pivot.
    std::vector<std::pair<std::size_t, EdgeSet>> basis;
    std::set<std::size_t> sizes;
    for (auto& cand : candidates) {
        if (basis.size() == rank) break;
        EdgeSet row = cand.edges;
        for (const auto& [pivot, brow] : basis) {
            if ((row[pivot / 64] >> (pivot % 64)) & 1u)
                for (std::size_t w = 0; w < words; ++w) row[w] ^= brow[w];
        }
        std::size_t pivot = kUnreached;
        for (std::size_t w = 0; w < words && pivot == kUnreached; ++w)
            if (row[w] != 0) pivot = w * 64 + static_cast<std::size_t>(std::countr_zero(row[w]));
        if (pivot == kUnreached) continue;
        basis.emplace_back(pivot, std::move(row));
        sizes.insert(cand.length);
    }
    return sizes;
}

/// MACCS keys computable from element classes, ring sizes and bonded atom
/// pairs alone. Pattern keys (8, 13, 15-17, 21, 23) and keys 25-166 need
/// substructure definitions and are never set.
inline constexpr std::array<std::size_t, 17> kSupportedKeys = {1,  2,  3,  4,  5,  6,  7,  9, 10,
                                                               11, 12, 14, 18, 19, 20, 22, 24};

struct KeyCoverage {
    std::vector<std::size_t> supported;
    Fingerprint computed;

    static Fingerprint supported_mask() {
        Fingerprint mask;
        for (auto key : kSupportedKeys) mask.set(key);
        return mask;
    }

    static std::vector<std::size_t> unsupported_keys() {
        const auto mask = supported_mask();
        std::vector<std::size_t> out;
        for (std::size_t key = 1; key <= kKeyCount; ++key)
            if (!mask.test(key)) out.push_back(key);
        return out;
    }
};

namespace detail {

inline bool element_in(std::string_view element, std::initializer_list<std::string_view> set) {
    return std::find(set.begin(), set.end(), element) != set.end();
}

}  // namespace detail

inline KeyCoverage compute_subset_keys(const Molecule& mol) {
    using detail::element_in;
    Fingerprint fp;
    for (const auto& atom : mol.atoms) {
        const int z = atom.atomic_number;
        const std::string_view el = atom.element;
        if (atom.isotope_flag) fp.set(1);
        if (z > 103 && z < 256) fp.set(2);
        if (element_in(el, {"Ge", "As", "Se", "Sn", "Sb", "Te", "Pb", "Bi", "Po"})) fp.set(3);
        if (z >= 89 && z <= 103) fp.set(4);
        if (element_in(el, {"Sc", "Y", "Ti", "Zr", "Hf"})) fp.set(5);
        if (z >= 57 && z <= 71) fp.set(6);
        if (element_in(el, {"V", "Nb", "Ta", "Cr", "Mo", "W", "Mn", "Tc", "Re"})) fp.set(7);
        if (element_in(el, {"Fe", "Co", "Ni", "Ru", "Rh", "Pd", "Os", "Ir", "Pt"})) fp.set(9);
        if (element_in(el, {"Be", "Mg", "Ca", "Sr", "Ba", "Ra"})) fp.set(10);
        if (element_in(el, {"Cu", "Ag", "Au", "Zn", "Cd", "Hg"})) fp.set(12);
        if (element_in(el, {"B", "Al", "Ga", "In", "Tl"})) fp.set(18);
        if (el == "Si") fp.set(20);
    }
    for (const auto& bond : mol.bonds) {
        const std::string_view e1 = mol.atoms[bond.a1 - 1].element;
        const std::string_view e2 = mol.atoms[bond.a2 - 1].element;
        if (e1 == "S" && e2 == "S") fp.set(14);
        if ((e1 == "N" && e2 == "O") || (e1 == "O" && e2 == "N")) fp.set(24);
    }
    const auto rings = ring_sizes(mol);
    if (rings.contains(3)) fp.set(22);
    if (rings.contains(4)) fp.set(11);
    if (rings.contains(7)) fp.set(19);

    return {{kSupportedKeys.begin(), kSupportedKeys.end()}, fp};
}

/// One record of a multi-record SDF file.
struct SdfRecord {
    std::size_t index = 0;       // 0-based position in the file
    std::size_t first_line = 0;  // 1-based line of the record header
    std::string molblock;        // text up to and including "M  END"
    std::map<std::string, std::string> properties;
};

/// Streams "$$$$"-delimited records from an SDF file without parsing the
/// connection tables; call parse_molfile on `molblock`.
class SdfReader {
public:
    explicit SdfReader(std::istream& in) : in_(in) {}

    std::optional<SdfRecord> next() {
        SdfRecord rec;
        rec.index = index_;
        rec.first_line = line_no_ + 1;
        std::string line;
        bool in_molblock = true;
        bool any_content = false;
        std::string pending_key;
        bool reading_value = false;
        std::string value;

        auto flush_value = [&] {
            if (reading_value) rec.properties[pending_key] = value;
            reading_value = false;
            value.clear();
        };

        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.starts_with("$$$$")) {
                flush_value();
                ++index_;
                return rec;
            }
            if (!detail::trim(line).empty()) any_content = true;
            if (in_molblock) {
                rec.molblock += line;
                rec.molblock += '\n';
                if (line.starts_with("M  END")) in_molblock = false;
                continue;
            }
            if (line.starts_with(">")) {
                flush_value();
                const auto open = line.find('<');
                const auto close = line.find('>', open == std::string::npos ? 1 : open);
                if (open != std::string::npos && close != std::string::npos && close > open) {
                    pending_key = line.substr(open + 1, close - open - 1);
                    reading_value = true;
                }
                continue;
            }
            if (reading_value) {
                if (line.empty()) {
                    flush_value();
                } else {
                    if (!value.empty()) value += '\n';
                    value += line;
                }
            }
        }
        flush_value();
        if (!any_content) return std::nullopt;
        ++index_;
        return rec;
    }

private:
    std::istream& in_;
    std::size_t index_ = 0;
    std::size_t line_no_ = 0;
};

}  // namespace fpscreen
