#include <hmpc/model_file.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace hmpc {

namespace {

struct Cursor {
  std::string source;
  int line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(source + ":" + std::to_string(line) + ": " + msg);
  }
};

std::vector<std::string> tokenize(const std::string& raw) {
  std::string line = raw;
  const auto hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  std::istringstream ss(line);
  std::vector<std::string> toks;
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

double parse_number(const Cursor& cur, const std::string& tok) {
  double value = 0.0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end)
    cur.fail("expected a number, got '" + tok + "'");
  return value;
}

Eigen::Vector3d parse_vec3(const Cursor& cur, const std::vector<std::string>& toks,
                           size_t at) {
  if (toks.size() != at + 3)
    cur.fail("expected 3 numbers after '" + toks[0] + "'");
  return Eigen::Vector3d(parse_number(cur, toks[at]), parse_number(cur, toks[at + 1]),
                         parse_number(cur, toks[at + 2]));
}

}  // namespace

KinematicTree<double> parse_robot_model(std::istream& in,
                                        const std::string& source_name) {
  Cursor cur{source_name, 0};
  KinematicTree<double> tree;
  std::map<std::string, int> link_index;

  bool in_link = false;
  Link<double> link;
  bool is_root = false;
  bool has_parent = false, has_axis = false, has_origin = false,
       has_limits = false, has_mass = false, has_com = false, has_inertia = false;

  auto begin_link = [&](const std::string& name) {
    link = Link<double>();
    link.name = name;
    is_root = has_parent = has_axis = has_origin = has_limits = false;
    has_mass = has_com = has_inertia = false;
    in_link = true;
  };

  auto end_link = [&]() {
    if (!has_mass) cur.fail("link '" + link.name + "' missing 'mass'");
    if (!has_com) cur.fail("link '" + link.name + "' missing 'com'");
    if (!has_inertia) cur.fail("link '" + link.name + "' missing 'inertia'");
    if (is_root) {
      if (!tree.links.empty()) cur.fail("'root' allowed only for the first link");
      if (has_parent || has_axis || has_origin || has_limits)
        cur.fail("root link takes no parent/axis/origin/limits");
      link.parent = -1;
      link.joint.type = Joint<double>::Type::kFloating;
    } else {
      if (tree.links.empty()) cur.fail("first link must be declared 'root'");
      if (!has_parent) cur.fail("link '" + link.name + "' missing 'parent'");
      if (!has_axis) cur.fail("link '" + link.name + "' missing 'axis'");
      if (!has_origin) cur.fail("link '" + link.name + "' missing 'origin'");
      if (!has_limits) cur.fail("link '" + link.name + "' missing 'limits'");
      link.joint.type = Joint<double>::Type::kRevolute;
    }
    if (link_index.count(link.name))
      cur.fail("duplicate link name '" + link.name + "'");
    link_index[link.name] = tree.n_links();
    tree.links.push_back(link);
    in_link = false;
  };

  // One attribute (or closing brace) per token list; the '{' line may carry
  // the first attribute after the brace.
  auto link_attr = [&](const std::vector<std::string>& toks) {
    const std::string& key = toks[0];
    if (key == "}") {
      if (toks.size() != 1) cur.fail("unexpected tokens after '}'");
      end_link();
    } else if (key == "root") {
      if (toks.size() != 1) cur.fail("'root' takes no arguments");
      is_root = true;
    } else if (key == "parent") {
      if (toks.size() != 2) cur.fail("expected 'parent <link>'");
      const auto it = link_index.find(toks[1]);
      if (it == link_index.end())
        cur.fail("parent references unknown link '" + toks[1] + "'");
      link.parent = it->second;
      has_parent = true;
    } else if (key == "axis") {
      link.joint.axis = parse_vec3(cur, toks, 1);
      if (link.joint.axis.norm() < 1e-12) cur.fail("axis must be nonzero");
      link.joint.axis.normalize();
      has_axis = true;
    } else if (key == "origin") {
      link.origin = parse_vec3(cur, toks, 1);
      has_origin = true;
    } else if (key == "limits") {
      if (toks.size() != 3) cur.fail("expected 'limits <lo> <hi>'");
      link.joint.lo = parse_number(cur, toks[1]);
      link.joint.hi = parse_number(cur, toks[2]);
      if (!(link.joint.lo < link.joint.hi)) cur.fail("limits must satisfy lo < hi");
      has_limits = true;
    } else if (key == "mass") {
      if (toks.size() != 2) cur.fail("expected 'mass <kg>'");
      link.mass = parse_number(cur, toks[1]);
      if (!(link.mass > 0)) cur.fail("mass must be positive");
      has_mass = true;
    } else if (key == "com") {
      link.com = parse_vec3(cur, toks, 1);
      has_com = true;
    } else if (key == "inertia") {
      if (toks.size() != 4 && toks.size() != 7)
        cur.fail("expected 'inertia ixx iyy izz [ixy ixz iyz]'");
      Eigen::Matrix3d I = Eigen::Matrix3d::Zero();
      I(0, 0) = parse_number(cur, toks[1]);
      I(1, 1) = parse_number(cur, toks[2]);
      I(2, 2) = parse_number(cur, toks[3]);
      if (toks.size() == 7) {
        I(0, 1) = I(1, 0) = parse_number(cur, toks[4]);
        I(0, 2) = I(2, 0) = parse_number(cur, toks[5]);
        I(1, 2) = I(2, 1) = parse_number(cur, toks[6]);
      }
      link.inertia = I;
      has_inertia = true;
    } else {
      cur.fail("unknown link attribute '" + key + "'");
    }
  };

  bool has_robot = false;
  std::string raw;
  while (std::getline(in, raw)) {
    ++cur.line;
    const auto toks = tokenize(raw);
    if (toks.empty()) continue;
    const std::string& key = toks[0];

    if (in_link) {
      link_attr(toks);
      continue;
    }

    if (key == "robot") {
      if (toks.size() != 2) cur.fail("expected 'robot <name>'");
      if (has_robot) cur.fail("duplicate 'robot' directive");
      tree.name = toks[1];
      has_robot = true;
    } else if (key == "link") {
      if (toks.size() < 3 || toks[2] != "{")
        cur.fail("expected 'link <name> {'");
      if (!has_robot) cur.fail("'robot <name>' must come before the first link");
      begin_link(toks[1]);
      if (toks.size() > 3)
        link_attr(std::vector<std::string>(toks.begin() + 3, toks.end()));
    } else if (key == "contact") {
      if (toks.size() != 5)
        cur.fail("expected 'contact <link> <x> <y> <z>'");
      const auto it = link_index.find(toks[1]);
      if (it == link_index.end())
        cur.fail("contact references unknown link '" + toks[1] + "'");
      ContactPointDef<double> cp;
      cp.link = it->second;
      cp.offset = parse_vec3(cur, toks, 2);
      tree.contact_points.push_back(cp);
    } else {
      cur.fail("unknown directive '" + key + "'");
    }
  }

  if (in_link) cur.fail("unterminated link block '" + link.name + "'");
  if (tree.links.empty()) cur.fail("no links defined");

  try {
    tree.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(source_name + ": " + e.what());
  }
  return tree;
}

KinematicTree<double> load_robot_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError(path + ": cannot open file");
  return parse_robot_model(f, path);
}

}  // namespace hmpc
