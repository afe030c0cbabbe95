#ifndef HIERSEG_TEST_FIXTURES_HPP
#define HIERSEG_TEST_FIXTURES_HPP

#include <random>
#include <string>

#include "hierseg/hierarchy.hpp"

namespace fixtures {

// Dental panoramic class set: two root bone classes, Background, and a
// Tooth parent with four mutually exclusive child classes. Tooth carries a
// pixel value in the map but never appears in stored masks.
inline const char* kClassMapCsv =
    "Background,0\n"
    "Upper,1\n"
    "Lower,2\n"
    "Tooth,3\n"
    "Pulp,4\n"
    "Dentin,5\n"
    "Enamel,6\n"
    "Composite,7\n";

inline const char* kClassTreeJson =
    R"({"Background": {}, "Upper": {}, "Lower": {},
        "Tooth": {"Pulp": {}, "Dentin": {}, "Enamel": {}, "Composite": {}}})";

inline hierseg::ClassTree dental_tree() {
    return hierseg::parse_class_tree(kClassTreeJson,
                                     hierseg::parse_class_map(kClassMapCsv));
}

// Minimal 2-level tree: Background + Blob{A, B}.
inline hierseg::ClassTree blob_tree() {
    return hierseg::parse_class_tree(
        R"({"Background": {}, "Blob": {"A": {}, "B": {}}})",
        hierseg::parse_class_map("Background,0\nA,1\nB,2\n"));
}

inline double urand(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace fixtures

#endif
