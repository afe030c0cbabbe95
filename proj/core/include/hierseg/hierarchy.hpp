#ifndef HIERSEG_HIERARCHY_HPP
#define HIERSEG_HIERARCHY_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hierseg {

/// One class in the hierarchy. Names are compared byte-exactly.
struct ClassNode {
    std::string name;
    std::optional<std::string> parent; // empty for root-level classes
    std::vector<std::string> children; // ordered, empty for leaves
    int level = 0;
    std::optional<int> pixel_value; // present iff listed in the class map
};

struct HierarchyViolation {
    enum class Rule { MinChildren, Structure, MultipleBranches };
    enum class Severity { Error, Warning };
    Rule rule;
    Severity severity;
    std::string class_name;
    std::string message;
};

using ClassMapEntries = std::vector<std::pair<std::string, int>>;

/// Parsed class hierarchy plus the class-to-pixel mapping.
/// Immutable after construction; safe for concurrent reads.
class ClassTree {
public:
    std::vector<ClassNode> nodes; // breadth-wise, class-map order
    std::vector<std::vector<std::string>> levels; // per-level class names
    // per non-root level: parent -> ordered direct children
    std::vector<std::map<std::string, std::vector<std::string>>> parent_groups;

    const ClassNode& node(const std::string& name) const;
    bool has_class(const std::string& name) const;
    int num_levels() const { return static_cast<int>(levels.size()); }

    /// Index of the class within its level's ordered group.
    int index_in_level(const std::string& name) const;

    /// Leaf classes (mask-storable), in class-map order.
    std::vector<std::string> leaf_classes() const;

    /// Every leaf pixel value that the class covers (its own for leaves,
    /// all descendant leaves for parents).
    std::vector<int> descendant_pixel_values(const std::string& name) const;

    /// Total number of parent sets (NP in the consistency loss).
    int num_parent_sets() const;

    /// Stable 64-bit fingerprint of the class order, values and structure.
    /// Used to bind checkpoints to the dataset they were trained on.
    uint64_t fingerprint() const;

    std::string to_class_map_csv() const;
    std::string to_class_tree_json() const;

private:
    mutable std::map<std::string, int> index_cache_;
    int node_index(const std::string& name) const;
};

/// Parse a `name,value` CSV (optionally with a header row).
ClassMapEntries parse_class_map(const std::string& csv_text);

/// Parse the nested-object hierarchy JSON against a parsed class map.
ClassTree parse_class_tree(const std::string& json_text, const ClassMapEntries& class_map);

/// Check the hierarchy construction rules. Violations are data, not failures:
/// an empty list means the tree is fully conforming. A parent with exactly
/// two children is reported as a warning, not an error.
std::vector<HierarchyViolation> validate_hierarchy(const ClassTree& tree);

/// The class whose mask gates `name` in the loss; nothing for root-level
/// classes (their visibility map is all ones).
std::optional<std::string> visibility_parent(const ClassTree& tree, const std::string& name);

} // namespace hierseg

#endif
