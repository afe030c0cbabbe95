#include "hierseg/hierarchy.hpp"
#include "hierseg/errors.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace hierseg {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool is_integer(const std::string& s) {
    if (s.empty()) return false;
    size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

} // namespace

ClassMapEntries parse_class_map(const std::string& csv_text) {
    ClassMapEntries entries;
    std::istringstream in(csv_text);
    std::string line;
    bool first = true;
    std::set<std::string> names;
    std::set<int> values;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("class map: expected `name,value` row, got: " + line);
        std::string name = trim(line.substr(0, comma));
        std::string value = trim(line.substr(comma + 1));
        if (first && !is_integer(value)) {
            first = false; // header row
            continue;
        }
        first = false;
        if (!is_integer(value))
            throw DataError("class map: pixel value is not an integer: " + line);
        int v = std::stoi(value);
        if (v < 0)
            throw DataError("class map: negative pixel value for " + name);
        if (!names.insert(name).second)
            throw DataError("class map: duplicate class name " + name);
        if (!values.insert(v).second)
            throw DataError("class map: duplicate pixel value " + value);
        entries.emplace_back(name, v);
    }
    return entries;
}

ClassTree parse_class_tree(const std::string& json_text, const ClassMapEntries& class_map) {
    nlohmann::ordered_json root;
    try {
        root = nlohmann::ordered_json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("class tree: invalid JSON: ") + e.what());
    }
    if (!root.is_object())
        throw DataError("class tree: top level must be an object");

    std::map<std::string, int> map_values;
    for (const auto& [name, value] : class_map) map_values[name] = value;

    ClassTree tree;
    std::set<std::string> seen;

    // Breadth-first walk so node order is breadth-wise like the class map.
    struct Pending {
        std::string name;
        std::optional<std::string> parent;
        nlohmann::ordered_json body;
        int level;
    };
    std::vector<Pending> frontier;
    for (auto it = root.begin(); it != root.end(); ++it)
        frontier.push_back({it.key(), std::nullopt, it.value(), 0});

    while (!frontier.empty()) {
        std::vector<Pending> next;
        for (const auto& p : frontier) {
            if (!p.body.is_object())
                throw DataError("class tree: value of " + p.name + " must be an object");
            if (!seen.insert(p.name).second)
                throw DataError("class tree: class " + p.name + " appears in multiple branches");
            ClassNode node;
            node.name = p.name;
            node.parent = p.parent;
            node.level = p.level;
            for (auto it = p.body.begin(); it != p.body.end(); ++it) {
                node.children.push_back(it.key());
                next.push_back({it.key(), p.name, it.value(), p.level + 1});
            }
            auto mv = map_values.find(p.name);
            if (mv != map_values.end()) node.pixel_value = mv->second;
            if (node.children.empty() && !node.pixel_value)
                throw DataError("class tree: leaf " + p.name + " has no pixel value in the class map");
            tree.nodes.push_back(std::move(node));
            if (static_cast<int>(tree.levels.size()) <= p.level)
                tree.levels.emplace_back();
            tree.levels[p.level].push_back(p.name);
        }
        frontier = std::move(next);
    }

    for (const auto& [name, value] : class_map) {
        (void)value;
        if (!seen.count(name))
            throw DataError("class tree: class map entry " + name + " missing from the tree");
    }

    tree.parent_groups.resize(tree.levels.size());
    for (const auto& n : tree.nodes)
        if (!n.children.empty())
            tree.parent_groups[n.level + 1][n.name] = n.children;

    return tree;
}

int ClassTree::node_index(const std::string& name) const {
    if (index_cache_.empty())
        for (size_t i = 0; i < nodes.size(); ++i) index_cache_[nodes[i].name] = static_cast<int>(i);
    auto it = index_cache_.find(name);
    if (it == index_cache_.end())
        throw DataError("unknown class: " + name);
    return it->second;
}

const ClassNode& ClassTree::node(const std::string& name) const {
    return nodes[node_index(name)];
}

bool ClassTree::has_class(const std::string& name) const {
    return std::any_of(nodes.begin(), nodes.end(),
                       [&](const ClassNode& n) { return n.name == name; });
}

int ClassTree::index_in_level(const std::string& name) const {
    const ClassNode& n = node(name);
    const auto& group = levels[n.level];
    auto it = std::find(group.begin(), group.end(), name);
    return static_cast<int>(it - group.begin());
}

std::vector<std::string> ClassTree::leaf_classes() const {
    std::vector<std::string> out;
    for (const auto& n : nodes)
        if (n.children.empty()) out.push_back(n.name);
    return out;
}

std::vector<int> ClassTree::descendant_pixel_values(const std::string& name) const {
    const ClassNode& n = node(name);
    std::vector<int> out;
    if (n.children.empty()) {
        out.push_back(*n.pixel_value);
        return out;
    }
    for (const auto& c : n.children) {
        auto sub = descendant_pixel_values(c);
        out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
}

int ClassTree::num_parent_sets() const {
    int np = 0;
    for (const auto& groups : parent_groups) np += static_cast<int>(groups.size());
    return np;
}

uint64_t ClassTree::fingerprint() const {
    // FNV-1a over the canonical serialized pair.
    std::string canon = to_class_map_csv() + "\n" + to_class_tree_json();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string ClassTree::to_class_map_csv() const {
    // Emit in pixel-value presence order matching the original node order.
    std::ostringstream out;
    for (const auto& n : nodes)
        if (n.pixel_value) out << n.name << "," << *n.pixel_value << "\n";
    return out.str();
}

std::string ClassTree::to_class_tree_json() const {
    std::function<nlohmann::ordered_json(const ClassNode&)> build =
        [&](const ClassNode& n) {
            nlohmann::ordered_json obj = nlohmann::ordered_json::object();
            for (const auto& c : n.children) obj[c] = build(node(c));
            return obj;
        };
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    for (const auto& name : levels.empty() ? std::vector<std::string>{} : levels[0])
        root[name] = build(node(name));
    return root.dump(4);
}

std::vector<HierarchyViolation> validate_hierarchy(const ClassTree& tree) {
    std::vector<HierarchyViolation> out;
    using R = HierarchyViolation::Rule;
    using S = HierarchyViolation::Severity;

    std::map<std::string, int> membership;
    for (const auto& n : tree.nodes) {
        membership[n.name]++;
        if (!n.children.empty()) {
            if (n.children.size() < 2)
                out.push_back({R::MinChildren, S::Error, n.name,
                               n.name + " has fewer than two direct child classes"});
            else if (n.children.size() == 2)
                out.push_back({R::MinChildren, S::Warning, n.name,
                               n.name + " has exactly two direct child classes"});
        }
        // Structural checks: parent link consistency and level arithmetic.
        if (n.parent) {
            if (!tree.has_class(*n.parent)) {
                out.push_back({R::Structure, S::Error, n.name,
                               n.name + " references unknown parent " + *n.parent});
                continue;
            }
            const ClassNode& p = tree.node(*n.parent);
            if (p.level != n.level - 1)
                out.push_back({R::Structure, S::Error, n.name,
                               n.name + " is not exactly one level below its parent"});
            if (std::find(p.children.begin(), p.children.end(), n.name) == p.children.end())
                out.push_back({R::Structure, S::Error, n.name,
                               n.name + " is missing from its parent's child list"});
        }
    }
    for (const auto& [name, count] : membership)
        if (count > 1)
            out.push_back({R::MultipleBranches, S::Error, name,
                           name + " exists over multiple branches"});

    // Cycle detection over parent links.
    for (const auto& n : tree.nodes) {
        std::set<std::string> visited{n.name};
        const ClassNode* cur = &n;
        while (cur->parent && tree.has_class(*cur->parent)) {
            if (!visited.insert(*cur->parent).second) {
                out.push_back({R::Structure, S::Error, n.name,
                               "cycle in parent links reachable from " + n.name});
                break;
            }
            cur = &tree.node(*cur->parent);
        }
    }
    return out;
}

std::optional<std::string> visibility_parent(const ClassTree& tree, const std::string& name) {
    return tree.node(name).parent;
}

} // namespace hierseg
