#include "gaitforge/model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "gaitforge/io.hpp"

#ifndef GAITFORGE_MODEL_DIR
#define GAITFORGE_MODEL_DIR "models"
#endif

namespace gaitforge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kUnitTol = 1e-9;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// ---------------------------------------------------------------------------
// Tokenizer

struct Statement {
  int line = 0;
  std::vector<std::string> tokens;
};

bool is_keyword(const std::string& t) {
  return t == "body" || t == "joint" || t == "closure" || t == "contact" || t == "symmetry" ||
         t == "flag";
}

std::vector<Statement> tokenize(const std::string& text) {
  std::vector<Statement> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    if (toks.empty()) continue;
    if (is_keyword(toks.front())) {
      out.push_back({lineno, std::move(toks)});
    } else {
      if (out.empty()) throw ModelError("unknown statement '" + toks.front() + "'", lineno);
      // indented continuation of the previous statement
      for (auto& t : toks) out.back().tokens.push_back(std::move(t));
    }
  }
  return out;
}

double parse_double(std::string_view s, int line) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ModelError("invalid number '" + std::string(s) + "'", line);
  return v;
}

std::vector<double> parse_list(const std::string& s, int line) {
  std::vector<double> out;
  size_t start = 0;
  while (start <= s.size()) {
    size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    std::string_view item(s.data() + start, comma - start);
    if (item.empty()) throw ModelError("empty list item in '" + s + "'", line);
    out.push_back(parse_double(item, line));
    start = comma + 1;
  }
  return out;
}

Eigen::Vector3d parse_vec3(const std::string& s, int line, const std::string& key) {
  auto v = parse_list(s, line);
  if (v.size() != 3) throw ModelError("'" + key + "' expects 3 values", line);
  return {v[0], v[1], v[2]};
}

Vector6d parse_vec6(const std::string& s, int line, const std::string& key) {
  auto v = parse_list(s, line);
  if (v.size() != 6) throw ModelError("'" + key + "' expects 6 values", line);
  Vector6d out;
  for (int i = 0; i < 6; ++i) out[i] = v[i];
  return out;
}

struct KeyValues {
  std::vector<std::pair<std::string, std::string>> items;
  int line = 0;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : items)
      if (k == key) return &v;
    return nullptr;
  }
  const std::string& require(const std::string& key) const {
    if (auto* v = find(key)) return *v;
    throw ModelError("missing '" + key + "'", line);
  }
};

KeyValues key_values(const Statement& st, size_t first) {
  KeyValues kv;
  kv.line = st.line;
  for (size_t i = first; i < st.tokens.size(); ++i) {
    const auto& t = st.tokens[i];
    auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) throw ModelError("expected key=value, got '" + t + "'", st.line);
    kv.items.emplace_back(t.substr(0, eq), t.substr(eq + 1));
  }
  return kv;
}

int find_body(const ModelDescription& d, const std::string& name, int line) {
  for (size_t i = 0; i < d.bodies.size(); ++i)
    if (d.bodies[i].name == name) return static_cast<int>(i);
  throw ModelError("unknown body '" + name + "'", line);
}

std::pair<int, Eigen::Vector3d> parse_body_point(const ModelDescription& d, const std::string& s,
                                                 int line) {
  auto at = s.find('@');
  if (at == std::string::npos) throw ModelError("expected <body>@<x,y,z>, got '" + s + "'", line);
  return {find_body(d, s.substr(0, at), line), parse_vec3(s.substr(at + 1), line, "point")};
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename Vec>
std::string fmt_list(const Vec& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

void check_unit(const Eigen::Vector3d& a, const std::string& what) {
  if (std::abs(a.norm() - 1.0) > kUnitTol) throw ModelError(what + " not unit-norm");
}

}  // namespace

// ---------------------------------------------------------------------------

Eigen::Matrix3d rotation_from_rpy(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

FramePlacement FramePlacement::from_xyz_rpy(const Vector6d& v) {
  return {rotation_from_rpy(v[3], v[4], v[5]), v.head<3>()};
}

const char* to_string(Side s) { return s == Side::Left ? "left" : "right"; }

const char* to_string(JointType t) {
  switch (t) {
    case JointType::Revolute: return "revolute";
    case JointType::Prismatic: return "prismatic";
    case JointType::Floating6: return "floating6";
    case JointType::Fixed: return "fixed";
  }
  return "?";
}

const char* to_string(ClosureKind k) {
  switch (k) {
    case ClosureKind::Point3: return "point3";
    case ClosureKind::PlanarPoint2: return "planar_point2";
    case ClosureKind::Pin5: return "pin5";
  }
  return "?";
}

ModelDescription parse_model(const std::string& text) {
  ModelDescription d;
  for (const auto& st : tokenize(text)) {
    const auto& kw = st.tokens.front();
    if (kw == "body") {
      if (st.tokens.size() < 2) throw ModelError("body needs a name", st.line);
      Body b;
      b.name = st.tokens[1];
      for (const auto& other : d.bodies)
        if (other.name == b.name) throw ModelError("duplicate body '" + b.name + "'", st.line);
      auto kv = key_values(st, 2);
      b.mass = parse_double(kv.require("mass"), st.line);
      if (auto* c = kv.find("com")) b.com = parse_vec3(*c, st.line, "com");
      if (auto* in = kv.find("inertia")) {
        auto v = parse_vec6(*in, st.line, "inertia");
        b.inertia << v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2];
      }
      d.bodies.push_back(b);
    } else if (kw == "joint") {
      if (st.tokens.size() < 2) throw ModelError("joint needs a name", st.line);
      JointSpec j;
      j.name = st.tokens[1];
      auto kv = key_values(st, 2);
      const auto& type = kv.require("type");
      if (type == "revolute") j.type = JointType::Revolute;
      else if (type == "prismatic") j.type = JointType::Prismatic;
      else if (type == "floating6") j.type = JointType::Floating6;
      else if (type == "fixed") j.type = JointType::Fixed;
      else throw ModelError("unknown joint type '" + type + "'", st.line);
      j.parent = find_body(d, kv.require("parent"), st.line);
      j.child = find_body(d, kv.require("child"), st.line);
      if (auto* o = kv.find("origin")) j.origin = parse_vec6(*o, st.line, "origin");
      if (auto* a = kv.find("axis")) j.axis = parse_vec3(*a, st.line, "axis");
      if (auto* l = kv.find("limits")) {
        auto v = parse_list(*l, st.line);
        if (v.size() % 2 != 0) throw ModelError("'limits' expects lo,hi pairs", st.line);
        for (size_t i = 0; i < v.size(); i += 2) {
          j.lower.push_back(v[i]);
          j.upper.push_back(v[i + 1]);
        }
      }
      if (auto* v = kv.find("vmax")) j.velocity_limit = parse_double(*v, st.line);
      if (auto* t = kv.find("taumax")) j.torque_limit = parse_double(*t, st.line);
      if (auto* a = kv.find("actuated")) {
        if (*a != "0" && *a != "1") throw ModelError("'actuated' must be 0 or 1", st.line);
        j.actuated = *a == "1";
      }
      d.joints.push_back(j);
    } else if (kw == "closure") {
      if (st.tokens.size() < 2) throw ModelError("closure needs a name", st.line);
      LoopClosure c;
      c.name = st.tokens[1];
      auto kv = key_values(st, 2);
      const auto& kind = kv.require("kind");
      if (kind == "point3") c.kind = ClosureKind::Point3;
      else if (kind == "planar_point2") c.kind = ClosureKind::PlanarPoint2;
      else if (kind == "pin5") c.kind = ClosureKind::Pin5;
      else throw ModelError("unknown closure kind '" + kind + "'", st.line);
      std::tie(c.parent_body, c.parent_point) = parse_body_point(d, kv.require("parent"), st.line);
      std::tie(c.child_body, c.child_point) = parse_body_point(d, kv.require("child"), st.line);
      if (auto* n = kv.find("normal")) {
        c.normal = parse_vec3(*n, st.line, "normal");
        c.has_normal = true;
      }
      if (auto* a = kv.find("axis")) {
        c.normal = parse_vec3(*a, st.line, "axis");
        c.has_normal = true;
      }
      if (auto* a = kv.find("child_axis")) {
        c.child_axis = parse_vec3(*a, st.line, "child_axis");
        c.has_child_axis = true;
      }
      if (c.kind == ClosureKind::PlanarPoint2 && !c.has_normal)
        throw ModelError("planar_point2 closure needs normal=", st.line);
      if (c.kind == ClosureKind::Pin5 && !c.has_normal)
        throw ModelError("pin5 closure needs axis=", st.line);
      if (!c.has_child_axis) c.child_axis = c.normal;
      d.closures.push_back(c);
    } else if (kw == "contact") {
      if (st.tokens.size() < 2) throw ModelError("contact needs a side", st.line);
      ContactPatch p;
      if (st.tokens[1] == "left") p.side = Side::Left;
      else if (st.tokens[1] == "right") p.side = Side::Right;
      else throw ModelError("contact side must be left or right", st.line);
      auto kv = key_values(st, 2);
      p.body = find_body(d, kv.require("body"), st.line);
      if (auto* f = kv.find("frame")) p.frame_xyz_rpy = parse_vec6(*f, st.line, "frame");
      p.frame = FramePlacement::from_xyz_rpy(p.frame_xyz_rpy);
      p.la = parse_double(kv.require("la"), st.line);
      p.lb = parse_double(kv.require("lb"), st.line);
      p.mu = parse_double(kv.require("mu"), st.line);
      p.gamma = parse_double(kv.require("gamma"), st.line);
      for (const auto& other : d.contacts)
        if (other.side == p.side) throw ModelError("duplicate contact side", st.line);
      d.contacts.push_back(p);
    } else if (kw == "symmetry") {
      std::string rest;
      for (size_t i = 1; i < st.tokens.size(); ++i) rest += st.tokens[i];
      if (rest.rfind("swap=", 0) != 0) throw ModelError("symmetry expects swap=<i:j:s,...>", st.line);
      rest = rest.substr(5);
      std::stringstream ss(rest);
      for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        auto c1 = item.find(':');
        auto c2 = item.find(':', c1 == std::string::npos ? 0 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
          throw ModelError("bad swap entry '" + item + "'", st.line);
        SwapEntry e;
        e.to = static_cast<int>(parse_double(item.substr(0, c1), st.line));
        e.from = static_cast<int>(parse_double(item.substr(c1 + 1, c2 - c1 - 1), st.line));
        auto sign = parse_double(item.substr(c2 + 1), st.line);
        if (sign != 1.0 && sign != -1.0) throw ModelError("swap sign must be +1 or -1", st.line);
        e.sign = static_cast<int>(sign);
        d.swap.push_back(e);
      }
      d.has_symmetry = true;
    } else if (kw == "flag") {
      if (st.tokens.size() != 2 || st.tokens[1] != "fully_actuated_in_stance")
        throw ModelError("unknown flag", st.line);
      d.fully_actuated_in_stance = true;
    }
  }
  return d;
}

RobotModel RobotModel::from_description(ModelDescription d) {
  RobotModel m;

  for (const auto& b : d.bodies) {
    if (!(b.mass >= 0.0)) throw ModelError("body '" + b.name + "': mass must be non-negative");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(b.inertia);
    Eigen::Vector3d ev = es.eigenvalues();
    double scale = 1e-12 * (1.0 + ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -scale)
      throw ModelError("body '" + b.name + "': inertia not positive semidefinite");
    for (int i = 0; i < 3; ++i)
      if (ev[i] + ev[(i + 1) % 3] < ev[(i + 2) % 3] - scale)
        throw ModelError("body '" + b.name + "': inertia violates the triangle inequality");
  }

  // Tree expansion.
  std::vector<int> parent_joint(d.bodies.size(), -1);
  for (size_t ji = 0; ji < d.joints.size(); ++ji) {
    const auto& j = d.joints[ji];
    if (j.parent == j.child) throw ModelError("joint '" + j.name + "': parent equals child");
    if (parent_joint[j.child] >= 0)
      throw ModelError("body '" + d.bodies[j.child].name + "' has two parent joints");
    parent_joint[j.child] = static_cast<int>(ji);
  }
  int root = -1;
  for (size_t b = 0; b < d.bodies.size(); ++b) {
    if (parent_joint[b] < 0) {
      if (root >= 0) throw ModelError("tree is not connected: bodies '" + d.bodies[root].name +
                                      "' and '" + d.bodies[b].name + "' have no parent joint");
      root = static_cast<int>(b);
    }
  }
  if (root < 0) throw ModelError("tree has no root body (cycle)");

  std::vector<bool> placed(d.bodies.size(), false);
  m.body_frames_.assign(d.bodies.size(), BodyFrame{});
  placed[root] = true;

  auto add_link = [&](int parent, int joint, const FramePlacement& tree, const Eigen::Vector3d& axis,
                      bool prismatic, const std::string& name) {
    Link l;
    l.parent = parent;
    l.joint = joint;
    l.tree = tree;
    l.axis = axis;
    l.prismatic = prismatic;
    m.links_.push_back(l);
    m.coord_names_.push_back(name);
    m.actuated_mask_.push_back(d.joints[joint].actuated);
    std::vector<int> anc = parent >= 0 ? m.ancestors_[parent] : std::vector<int>{};
    anc.push_back(static_cast<int>(m.links_.size()) - 1);
    m.ancestors_.push_back(std::move(anc));
    return static_cast<int>(m.links_.size()) - 1;
  };

  std::vector<double> lower, upper;
  for (size_t ji = 0; ji < d.joints.size(); ++ji) {
    auto& j = d.joints[ji];
    if (!placed[j.parent])
      throw ModelError("joint '" + j.name + "': parent body '" + d.bodies[j.parent].name +
                       "' is not attached yet (joints must be in tree order)");
    const int nc = j.num_coords();
    if (j.type == JointType::Revolute || j.type == JointType::Prismatic) check_unit(j.axis, "joint '" + j.name + "': axis");
    if (j.type == JointType::Floating6 && j.actuated)
      throw ModelError("joint '" + j.name + "': floating6 coordinates cannot be actuated");
    if (nc > 0) {
      if (j.lower.empty()) {
        j.lower.assign(nc, -kInf);
        j.upper.assign(nc, kInf);
      } else if (j.lower.size() == 1 && nc > 1) {
        j.lower.assign(nc, j.lower[0]);
        j.upper.assign(nc, j.upper[0]);
      }
      if (static_cast<int>(j.lower.size()) != nc)
        throw ModelError("joint '" + j.name + "': expected " + std::to_string(nc) + " limit pairs");
      for (int i = 0; i < nc; ++i)
        if (!(j.lower[i] <= j.upper[i]))
          throw ModelError("joint '" + j.name + "': lower limit exceeds upper limit");
    }
    if (j.velocity_limit < 0.0 || j.torque_limit < 0.0)
      throw ModelError("joint '" + j.name + "': limits must be non-negative");

    const BodyFrame pf = m.body_frames_[j.parent];
    const FramePlacement joint_frame = pf.offset * FramePlacement::from_xyz_rpy(j.origin);
    const int jid = static_cast<int>(ji);
    switch (j.type) {
      case JointType::Fixed:
        m.body_frames_[j.child] = {pf.link, joint_frame};
        break;
      case JointType::Revolute:
      case JointType::Prismatic: {
        int l = add_link(pf.link, jid, joint_frame, j.axis, j.type == JointType::Prismatic, j.name);
        m.body_frames_[j.child] = {l, FramePlacement{}};
        break;
      }
      case JointType::Floating6: {
        if (m.floating_base_ >= 0) throw ModelError("only one floating6 joint is supported");
        static const char* suffix[6] = {"_x", "_y", "_z", "_yaw", "_pitch", "_roll"};
        const Eigen::Vector3d axes[6] = {Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(),
                                         Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitZ(),
                                         Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitX()};
        int l = pf.link;
        for (int k = 0; k < 6; ++k) {
          l = add_link(l, jid, k == 0 ? joint_frame : FramePlacement{}, axes[k], k < 3,
                       j.name + suffix[k]);
          if (k == 0) m.floating_base_ = l;
        }
        m.body_frames_[j.child] = {l, FramePlacement{}};
        m.torso_body_ = j.child;
        break;
      }
    }
    for (int i = 0; i < nc; ++i) {
      lower.push_back(j.lower[i]);
      upper.push_back(j.upper[i]);
    }
    placed[j.child] = true;
  }

  const int n = m.n();
  m.lower_ = Eigen::Map<Eigen::VectorXd>(lower.data(), n);
  m.upper_ = Eigen::Map<Eigen::VectorXd>(upper.data(), n);
  std::vector<double> taus;
  for (int i = 0; i < n; ++i) {
    if (m.actuated_mask_[i]) {
      m.actuated_.push_back(i);
      taus.push_back(d.joints[m.links_[i].joint].torque_limit);
    } else {
      m.unactuated_.push_back(i);
    }
  }
  m.torque_limits_ = Eigen::Map<Eigen::VectorXd>(taus.data(), static_cast<Eigen::Index>(taus.size()));

  // Lump body inertias into their links.
  for (size_t b = 0; b < d.bodies.size(); ++b) {
    const auto& bf = m.body_frames_[b];
    if (bf.link < 0) continue;
    const auto& body = d.bodies[b];
    Link& l = m.links_[bf.link];
    const Eigen::Vector3d c = bf.offset.act(body.com);
    const Eigen::Matrix3d Ic = bf.offset.rotation * body.inertia * bf.offset.rotation.transpose();
    const Eigen::Matrix3d cx = skew(c);
    Matrix6d I;
    I.topLeftCorner<3, 3>() = Ic - body.mass * cx * cx;
    I.topRightCorner<3, 3>() = body.mass * cx;
    I.bottomLeftCorner<3, 3>() = -body.mass * cx;
    I.bottomRightCorner<3, 3>() = body.mass * Eigen::Matrix3d::Identity();
    l.spatial_inertia += I;
    const double total = l.mass + body.mass;
    if (total > 0.0) l.com = (l.mass * l.com + body.mass * c) / total;
    l.mass = total;
  }

  for (const auto& c : d.closures) {
    if (c.kind != ClosureKind::Point3) check_unit(c.normal, "closure '" + c.name + "': normal/axis");
    if (c.kind == ClosureKind::Pin5) check_unit(c.child_axis, "closure '" + c.name + "': child_axis");
    m.closure_rows_ += c.rows();
  }

  for (const auto& p : d.contacts) {
    if (!(p.la > 0.0 && p.lb > 0.0)) throw ModelError("contact: la and lb must be positive");
    if (!(p.mu >= 0.0 && p.gamma >= 0.0)) throw ModelError("contact: mu and gamma must be non-negative");
    (p.side == Side::Left ? m.has_left_ : m.has_right_) = true;
  }

  m.swap_perm_.resize(n);
  m.swap_sign_.assign(n, 1);
  for (int i = 0; i < n; ++i) m.swap_perm_[i] = i;
  std::vector<bool> seen(n, false);
  for (const auto& e : d.swap) {
    if (e.to < 0 || e.to >= n || e.from < 0 || e.from >= n)
      throw ModelError("symmetry: coordinate index out of range");
    if (seen[e.to]) throw ModelError("symmetry: coordinate " + std::to_string(e.to) + " listed twice");
    seen[e.to] = true;
    m.swap_perm_[e.to] = e.from;
    m.swap_sign_[e.to] = e.sign;
  }
  for (int i = 0; i < n; ++i) {
    int j = m.swap_perm_[i];
    if (m.swap_perm_[j] != i || m.swap_sign_[i] * m.swap_sign_[j] != 1)
      throw ModelError("symmetry: swap permutation is not an involution");
  }

  if (d.fully_actuated_in_stance) {
    if (!m.has_contacts()) throw ModelError("fully_actuated_in_stance requires left and right contacts");
    if (m.n_u() != m.closure_rows_ + 6)
      throw ModelError("fully_actuated_in_stance flag inconsistent: n_u = " + std::to_string(m.n_u()) +
                       " but closure rows + 6 = " + std::to_string(m.closure_rows_ + 6));
  }

  m.desc_ = std::move(d);
  return m;
}

Eigen::MatrixXd RobotModel::transmission() const {
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n(), n_a());
  for (int k = 0; k < n_a(); ++k) B(actuated_[k], k) = 1.0;
  return B;
}

int RobotModel::body_index(const std::string& name) const {
  for (size_t i = 0; i < desc_.bodies.size(); ++i)
    if (desc_.bodies[i].name == name) return static_cast<int>(i);
  throw ModelError("unknown body '" + name + "'");
}

const ContactPatch& RobotModel::contact(Side side) const {
  for (const auto& p : desc_.contacts)
    if (p.side == side) return p;
  throw ModelError(std::string("model has no ") + to_string(side) + " contact");
}

double RobotModel::total_mass() const {
  double m = 0.0;
  for (const auto& l : links_) m += l.mass;
  return m;
}

Eigen::VectorXd RobotModel::neutral_configuration() const {
  Eigen::VectorXd q(n());
  for (int i = 0; i < n(); ++i) {
    double lo = lower_[i], hi = upper_[i];
    if (lo <= 0.0 && 0.0 <= hi) q[i] = 0.0;
    else if (std::isfinite(lo) && std::isfinite(hi)) q[i] = 0.5 * (lo + hi);
    else q[i] = std::isfinite(lo) ? lo : hi;
  }
  return q;
}

RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("model file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return RobotModel::from_description(parse_model(ss.str()));
}

std::string serialize_model(const RobotModel& model) {
  const auto& d = model.description();
  std::ostringstream out;
  for (const auto& b : d.bodies) {
    const auto& I = b.inertia;
    Vector6d iv;
    iv << I(0, 0), I(1, 1), I(2, 2), I(0, 1), I(0, 2), I(1, 2);
    out << "body " << b.name << " mass=" << fmt(b.mass) << " com=" << fmt_list(b.com)
        << " inertia=" << fmt_list(iv) << "\n";
  }
  for (const auto& j : d.joints) {
    out << "joint " << j.name << " type=" << to_string(j.type) << " parent=" << d.bodies[j.parent].name
        << " child=" << d.bodies[j.child].name << "\n      origin=" << fmt_list(j.origin)
        << " axis=" << fmt_list(j.axis);
    if (!j.lower.empty()) {
      std::vector<double> lim;
      for (size_t i = 0; i < j.lower.size(); ++i) {
        lim.push_back(j.lower[i]);
        lim.push_back(j.upper[i]);
      }
      out << " limits=" << fmt_list(Eigen::Map<Eigen::VectorXd>(lim.data(), lim.size()));
    }
    out << "\n      vmax=" << fmt(j.velocity_limit) << " taumax=" << fmt(j.torque_limit)
        << " actuated=" << (j.actuated ? 1 : 0) << "\n";
  }
  for (const auto& c : d.closures) {
    out << "closure " << c.name << " kind=" << to_string(c.kind) << " parent=" << d.bodies[c.parent_body].name
        << "@" << fmt_list(c.parent_point) << " child=" << d.bodies[c.child_body].name << "@"
        << fmt_list(c.child_point);
    if (c.kind == ClosureKind::PlanarPoint2) out << " normal=" << fmt_list(c.normal);
    if (c.kind == ClosureKind::Pin5)
      out << " axis=" << fmt_list(c.normal) << " child_axis=" << fmt_list(c.child_axis);
    out << "\n";
  }
  for (const auto& p : d.contacts) {
    out << "contact " << to_string(p.side) << " body=" << d.bodies[p.body].name
        << " frame=" << fmt_list(p.frame_xyz_rpy) << " la=" << fmt(p.la) << " lb=" << fmt(p.lb)
        << " mu=" << fmt(p.mu) << " gamma=" << fmt(p.gamma) << "\n";
  }
  if (d.has_symmetry) {
    out << "symmetry swap=";
    for (size_t i = 0; i < d.swap.size(); ++i) {
      if (i) out << ",";
      out << d.swap[i].to << ":" << d.swap[i].from << ":" << (d.swap[i].sign > 0 ? "+1" : "-1");
    }
    out << "\n";
  }
  if (d.fully_actuated_in_stance) out << "flag fully_actuated_in_stance\n";
  return out.str();
}

std::string model_hash(const RobotModel& model) { return sha256_hex(serialize_model(model)); }

Eigen::VectorXd swap_coordinates(const RobotModel& model, const Eigen::VectorXd& q) {
  if (!model.has_symmetry()) throw ModelError("model declares no leg-swap permutation");
  if (q.size() != model.n()) throw std::invalid_argument("swap_coordinates: size mismatch");
  Eigen::VectorXd out(q.size());
  const auto& perm = model.swap_permutation();
  const auto& sign = model.swap_signs();
  for (int i = 0; i < model.n(); ++i) out[i] = sign[i] * q[perm[i]];
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> swap_legs(const RobotModel& model, const Eigen::VectorXd& q,
                                                      const Eigen::VectorXd& qd) {
  return {swap_coordinates(model, q), swap_coordinates(model, qd)};
}

std::string bundled_model_dir() {
  if (const char* env = std::getenv("GAITFORGE_MODEL_DIR")) return env;
  return GAITFORGE_MODEL_DIR;
}

std::string bundled_model_path(const std::string& name) {
  return bundled_model_dir() + "/" + name + ".model";
}

}  // namespace gaitforge
