#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fpscreen/molfile.hpp"

using namespace fpscreen;

namespace {

std::string read_fixture(const std::string& name) {
    std::ifstream in(std::string(FPSCREEN_FIXTURES) + "/molfiles/" + name);
    if (!in) throw std::runtime_error("missing fixture " + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Molecule load(const std::string& name) { return parse_molfile(read_fixture(name)); }

std::vector<std::size_t> set_keys(const Fingerprint& fp) {
    std::vector<std::size_t> keys;
    for (std::size_t k = 1; k <= kKeyCount; ++k)
        if (fp.test(k)) keys.push_back(k);
    return keys;
}

Molecule atoms_only(std::initializer_list<const char*> symbols) {
    Molecule m;
    for (const auto* s : symbols) m.atoms.push_back({s, *elements::atomic_number(s), false});
    return m;
}

Molecule disjoint_union(const Molecule& a, const Molecule& b) {
    Molecule m = a;
    const auto offset = a.atoms.size();
    m.atoms.insert(m.atoms.end(), b.atoms.begin(), b.atoms.end());
    for (auto bond : b.bonds) m.bonds.push_back({bond.a1 + offset, bond.a2 + offset, bond.order});
    return m;
}

Molecule relabel(const Molecule& mol, std::mt19937_64& rng) {
    std::vector<std::size_t> perm(mol.atoms.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Molecule out;
    out.atoms.resize(mol.atoms.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out.atoms[perm[i]] = mol.atoms[i];
    for (const auto& b : mol.bonds) out.bonds.push_back({perm[b.a1 - 1] + 1, perm[b.a2 - 1] + 1, b.order});
    std::shuffle(out.bonds.begin(), out.bonds.end(), rng);
    return out;
}

}  // namespace

TEST(ParseMolfile, SingleCarbon) {
    const auto m = load("single_carbon.mol");
    ASSERT_EQ(m.atoms.size(), 1u);
    EXPECT_EQ(m.bonds.size(), 0u);
    EXPECT_EQ(m.atoms[0].element, "C");
    EXPECT_EQ(m.atoms[0].atomic_number, 6);
    EXPECT_FALSE(m.atoms[0].isotope_flag);
    EXPECT_EQ(m.name, "methane");
}

TEST(ParseMolfile, Cyclopropane) {
    const auto m = load("cyclopropane.mol");
    EXPECT_EQ(m.atoms.size(), 3u);
    ASSERT_EQ(m.bonds.size(), 3u);
    EXPECT_EQ(m.bonds[2].a1, 3u);
    EXPECT_EQ(m.bonds[2].a2, 1u);
}

TEST(ParseMolfile, TruncatedAtomBlock) {
    try {
        load("truncated_atoms.mol");
        FAIL();
    } catch (const MolfileError& e) {
        EXPECT_EQ(e.code(), MolfileErrc::truncated_block);
        EXPECT_EQ(e.line(), 8u);
    }
}

TEST(ParseMolfile, V3000Rejected) {
    try {
        load("v3000.mol");
        FAIL();
    } catch (const MolfileError& e) {
        EXPECT_EQ(e.code(), MolfileErrc::unsupported_version);
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(ParseMolfile, BondIndexOutOfRange) {
    try {
        load("bad_bond_index.mol");
        FAIL();
    } catch (const MolfileError& e) {
        EXPECT_EQ(e.code(), MolfileErrc::atom_index_out_of_range);
        EXPECT_EQ(e.line(), 7u);
    }
}

TEST(ParseMolfile, MalformedCountsLine) {
    try {
        parse_molfile("x\n\n\nabc\n");
        FAIL();
    } catch (const MolfileError& e) {
        EXPECT_EQ(e.code(), MolfileErrc::malformed_counts_line);
    }
    try {
        parse_molfile("x\n\n");
        FAIL();
    } catch (const MolfileError& e) {
        EXPECT_EQ(e.code(), MolfileErrc::truncated_block);
    }
}

TEST(ParseMolfile, UnknownElement) {
    auto text = read_fixture("single_carbon.mol");
    text.replace(text.find(" C  "), 4, " Xx ");
    try {
        parse_molfile(text);
        FAIL();
    } catch (const MolfileError& e) {
        EXPECT_EQ(e.code(), MolfileErrc::unknown_element);
        EXPECT_EQ(e.line(), 5u);
    }
}

TEST(ParseMolfile, IsotopeSources) {
    EXPECT_TRUE(load("isotope_carbon.mol").atoms[0].isotope_flag);
    const auto m = load("isotope_massdiff.mol");
    EXPECT_TRUE(m.atoms[0].isotope_flag);
    EXPECT_FALSE(m.atoms[1].isotope_flag);
}

TEST(ParseMolfile, CrlfTolerated) {
    auto text = read_fixture("cyclopropane.mol");
    std::string crlf;
    for (char c : text) {
        if (c == '\n') crlf += '\r';
        crlf += c;
    }
    const auto m = parse_molfile(crlf);
    EXPECT_EQ(m.atoms.size(), 3u);
    EXPECT_EQ(m.bonds.size(), 3u);
}

TEST(RingSizes, HandAnalysedGraphs) {
    EXPECT_EQ(ring_sizes(load("cyclopropane.mol")), (std::set<std::size_t>{3}));
    EXPECT_EQ(ring_sizes(load("propane.mol")), (std::set<std::size_t>{}));
    EXPECT_EQ(ring_sizes(load("spirohexane.mol")), (std::set<std::size_t>{3, 4}));
    EXPECT_EQ(ring_sizes(load("cyclobutane.mol")), (std::set<std::size_t>{4}));
    EXPECT_EQ(ring_sizes(load("cycloheptane.mol")), (std::set<std::size_t>{7}));
    // The envelope 4-cycle is the sum of the two triangles, not a basis ring.
    EXPECT_EQ(ring_sizes(load("bicyclobutane.mol")), (std::set<std::size_t>{3}));
    // Five of the six faces; the sixth is dependent.
    EXPECT_EQ(ring_sizes(load("cubane.mol")), (std::set<std::size_t>{4}));
}

TEST(RingSizes, InvariantUnderRelabeling) {
    std::mt19937_64 rng(11);
    for (const auto* name : {"spirohexane.mol", "cubane.mol", "bicyclobutane.mol", "cycloheptane.mol",
                             "iron_pentacarbonyl.mol"}) {
        const auto mol = load(name);
        const auto expected = ring_sizes(mol);
        for (int i = 0; i < 25; ++i) ASSERT_EQ(ring_sizes(relabel(mol, rng)), expected) << name;
    }
}

TEST(RingSizes, FusedAndBridgedSystems) {
    // Naphthalene skeleton: two fused 6-rings.
    Molecule m;
    for (int i = 0; i < 10; ++i) m.atoms.push_back({"C", 6, false});
    const std::pair<int, int> edges[] = {{1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 1},
                                         {5, 7}, {7, 8}, {8, 9}, {9, 10}, {10, 4}};
    for (auto [a, b] : edges) m.bonds.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), 1});
    EXPECT_EQ(ring_sizes(m), (std::set<std::size_t>{6}));

    // Norbornane: bicyclo[2.2.1]heptane, basis is two 5-rings.
    Molecule n;
    for (int i = 0; i < 7; ++i) n.atoms.push_back({"C", 6, false});
    const std::pair<int, int> nb[] = {{1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 1}, {1, 7}, {7, 4}};
    for (auto [a, b] : nb) n.bonds.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), 1});
    EXPECT_EQ(ring_sizes(n), (std::set<std::size_t>{5}));
}

// Each fixture is built to trigger exactly one Table-2-derived key.
TEST(SubsetKeys, FixtureSet) {
    const std::pair<const char*, std::size_t> cases[] = {
        {"isotope_carbon.mol", 1},      {"iron_pentacarbonyl.mol", 9},  {"cyclopropane.mol", 22},
        {"cyclobutane.mol", 11},        {"cycloheptane.mol", 19},       {"dimethyl_disulfide.mol", 14},
        {"methylhydroxylamine.mol", 24}, {"tetramethylsilane.mol", 20}, {"isotope_massdiff.mol", 1},
        {"iron_atom.mol", 9},
    };
    for (const auto& [name, key] : cases) {
        EXPECT_EQ(set_keys(compute_subset_keys(load(name)).computed), std::vector<std::size_t>{key}) << name;
    }
}

TEST(SubsetKeys, NothingForPlainMolecules) {
    EXPECT_TRUE(compute_subset_keys(load("dihydrogen.mol")).computed.empty());
    EXPECT_TRUE(compute_subset_keys(load("propane.mol")).computed.empty());
    EXPECT_EQ(set_keys(compute_subset_keys(load("spirohexane.mol")).computed), (std::vector<std::size_t>{11, 22}));
}

TEST(SubsetKeys, ElementClasses) {
    const std::pair<const char*, std::size_t> cases[] = {
        {"Rf", 2}, {"Og", 2}, {"Ge", 3}, {"Po", 3},  {"Ac", 4},  {"Lr", 4},  {"Sc", 5},  {"Hf", 5},
        {"La", 6}, {"Lu", 6}, {"V", 7},  {"Re", 7},  {"Fe", 9},  {"Pt", 9},  {"Be", 10}, {"Ra", 10},
        {"Cu", 12}, {"Hg", 12}, {"B", 18}, {"Tl", 18}, {"Si", 20},
    };
    for (const auto& [sym, key] : cases) {
        EXPECT_EQ(set_keys(compute_subset_keys(atoms_only({sym})).computed), std::vector<std::size_t>{key}) << sym;
    }
}

TEST(SubsetKeys, CoverageSet) {
    const auto cov = compute_subset_keys(load("single_carbon.mol"));
    EXPECT_EQ(cov.supported, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 14, 18, 19, 20, 22, 24}));
    EXPECT_EQ(KeyCoverage::unsupported_keys().size(), 149u);
    EXPECT_EQ(KeyCoverage::supported_mask().popcount(), 17u);
}

TEST(SubsetKeys, ComputedWithinSupportedForEveryElement) {
    const auto mask = KeyCoverage::supported_mask();
    const std::size_t classes[] = {3, 5, 7, 9, 10, 12, 18};
    for (int z = 1; z <= 118; ++z) {
        Molecule m;
        m.atoms.push_back({std::string(elements::symbol(z)), z, z % 3 == 0});
        const auto fp = compute_subset_keys(m).computed;
        ASSERT_EQ((fp | mask), mask) << z;
        int hits = 0;
        for (auto k : classes) hits += fp.test(k);
        ASSERT_LE(hits, 1) << elements::symbol(z);
    }
}

TEST(SubsetKeys, DisjointUnionIsBitwiseOr) {
    const char* names[] = {"isotope_carbon.mol",  "iron_pentacarbonyl.mol", "cyclopropane.mol",
                           "cyclobutane.mol",     "cycloheptane.mol",       "dimethyl_disulfide.mol",
                           "methylhydroxylamine.mol", "tetramethylsilane.mol", "spirohexane.mol", "propane.mol"};
    for (const auto* a : names) {
        for (const auto* b : names) {
            const auto ma = load(a);
            const auto mb = load(b);
            EXPECT_EQ(compute_subset_keys(disjoint_union(ma, mb)).computed,
                      compute_subset_keys(ma).computed | compute_subset_keys(mb).computed)
                << a << " + " << b;
        }
    }
}

TEST(SdfReader, PropertiesAndRecords) {
    std::ifstream in(std::string(FPSCREEN_FIXTURES) + "/sdf/three_one_bad.sdf");
    SdfReader reader(in);
    std::vector<SdfRecord> recs;
    while (auto r = reader.next()) recs.push_back(std::move(*r));
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].properties.at("PUBCHEM_COMPOUND_CID"), "6396");
    EXPECT_EQ(recs[1].index, 1u);
    EXPECT_TRUE(recs[2].properties.empty());
    EXPECT_NO_THROW(parse_molfile(recs[0].molblock));
    EXPECT_THROW(parse_molfile(recs[1].molblock), MolfileError);
    EXPECT_EQ(set_keys(compute_subset_keys(parse_molfile(recs[2].molblock)).computed), std::vector<std::size_t>{14});
}

TEST(SdfReader, EmptyInput) {
    std::istringstream in("");
    SdfReader reader(in);
    EXPECT_FALSE(reader.next().has_value());
}
