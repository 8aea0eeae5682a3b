#include "dynot/config.hpp"

#include "dynot/errors.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace dynot {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

void require_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) {
      std::string list;
      for (const auto& k : ok) list += (list.empty() ? "" : ", ") + k;
      throw ConfigError(where + ": unknown key '" + key + "' (allowed: " + list + ")");
    }
  }
}

template <class T>
T get(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

// A number (broadcast) or an array of exactly `dim` numbers.
Eigen::VectorXd vector_from(const Json& j, int dim, const std::string& where) {
  if (j.is_number()) return Eigen::VectorXd::Constant(dim, j.get<double>());
  const auto v = get<std::vector<double>>(j, where);
  if (static_cast<int>(v.size()) != dim) {
    throw ConfigError(where + ": expected " + std::to_string(dim) + " entries, got " +
                      std::to_string(v.size()));
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), dim);
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

GaussianSpec gaussian_from(const Json& j, int dim, const std::string& where) {
  GaussianSpec g{vector_from(j.at("mean"), dim, where + ".mean"),
                 vector_from(j.at("variance"), dim, where + ".variance")};
  g.validate();
  return g;
}

Json gaussian_to_json(const GaussianSpec& g) {
  return Json{{"mean", vector_to_json(g.mean)}, {"variance", vector_to_json(g.variance)}};
}

MixtureSpec mixture_from(const Json& comps, int dim, const std::string& where) {
  MixtureSpec m;
  if (!comps.is_array() || comps.empty()) throw ConfigError(where + ": need a component list");
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const std::string w = where + "[" + std::to_string(k) + "]";
    require_keys(comps[k], w, {"weight", "mean", "variance"});
    m.weights.push_back(get<double>(comps[k].at("weight"), w + ".weight"));
    m.components.push_back(gaussian_from(comps[k], dim, w));
  }
  m.validate();
  return m;
}

Json mixture_to_json(const MixtureSpec& m) {
  Json comps = Json::array();
  for (std::size_t k = 0; k < m.components.size(); ++k) {
    Json c{{"weight", m.weights[k]}};
    c.update(gaussian_to_json(m.components[k]));
    comps.push_back(c);
  }
  return comps;
}

Eigen::VectorXd shifted(int dim, std::initializer_list<double> head) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  int k = 0;
  for (double x : head) v[k++] = x;
  return v;
}

GaussianSpec iso(int dim, std::initializer_list<double> head, double variance) {
  return GaussianSpec::isotropic(shifted(dim, head), variance);
}

UniformBoxSpec window(double x0, double x1, double y0, double y1) {
  return {Eigen::Vector2d(x0, y0), Eigen::Vector2d(x1, y1)};
}

UniformBoxSpec window_around(const Problem& p) {
  const UniformBoxSpec box = p.regularizer_box;
  return {box.lower.head(std::min(2, box.dim())), box.upper.head(std::min(2, box.dim()))};
}

void set_problem(ExperimentConfig& c, Density initial, Density target) {
  c.problem.initial = std::move(initial);
  c.problem.target = std::move(target);
  c.problem.regularizer_box = default_regularizer_box(c.problem.initial, c.problem.target);
}

void crowd_defaults(ExperimentConfig& c) {
  c.hyper.kl_weight = 10.0;
  c.hyper.pref_weight = 500.0;
  c.hyper.reg_weight = 0.0;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dim < 1) throw ConfigError("config: dim must be >= 1");
  problem.validate();
  if (problem.dim() != dim) throw ConfigError("config: problem dimension differs from dim");
  network.validate();
  if (network.dim != dim) throw ConfigError("config: network dimension differs from dim");
  hyper.validate();
  check_steps(hyper.steps, network.intervals);
  train.validate();
  if (train.path == GradientPath::Adjoint && problem.importance_sampling()) {
    throw ConfigError("config: the adjoint gradient path requires sampling from rho_0");
  }
  if (seeds.empty()) throw ConfigError("config: need at least one seed");
  if (trajectory_particles < 0) throw ConfigError("config: trajectory_particles must be >= 0");
}

std::vector<std::string> preset_names() {
  return {"test1", "test2", "test3", "test4", "test5", "maze1", "maze2", "arch1d"};
}

ExperimentConfig make_preset(const std::string& name, int dim) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (valid presets: " + list + ")");
  }
  if (dim < 1) throw ConfigError("preset " + name + ": dim must be >= 1");
  ExperimentConfig c;
  c.preset = name;
  c.dim = dim;
  c.output = "runs/" + name;
  c.seeds = {0, 1, 2, 3, 4};
  c.train.learning_rate = 0.05;

  const bool planar = name != "arch1d";
  if (planar && dim < 2) throw ConfigError("preset " + name + " needs dim >= 2");

  if (name == "test1") {
    set_problem(c, iso(dim, {0.0}, 1.0), iso(dim, {-4.0}, 1.0));
  } else if (name == "test2") {
    set_problem(c, iso(dim, {0.0}, 0.3), iso(dim, {-4.0}, 1.0));
  } else if (name == "test3") {
    set_problem(c, iso(dim, {-4.0, -4.0}, 1.0), iso(dim, {4.0, 4.0}, 1.0));
  } else if (name == "test4") {
    set_problem(c, iso(dim, {-3.0}, 0.3), iso(dim, {3.0}, 0.3));
    GaussianSpec bump{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(0.5, 1.0)};
    c.problem.preference = GaussianBumps{MixtureSpec{{1.0}, {bump}}};
    crowd_defaults(c);
    c.plot_window = window(-5.0, 5.0, -5.0, 5.0);
  } else if (name == "test5") {
    set_problem(c, iso(dim, {-4.0}, 0.3), iso(dim, {4.0}, 0.3));
    GaussianSpec low{Eigen::Vector2d(0.0, -2.0), Eigen::Vector2d(0.1, 1.0)};
    GaussianSpec high{Eigen::Vector2d(0.0, 2.0), Eigen::Vector2d(0.1, 1.0)};
    c.problem.preference = GaussianBumps{MixtureSpec{{0.5, 0.5}, {low, high}}};
    crowd_defaults(c);
    c.plot_window = window(-6.0, 6.0, -6.0, 6.0);
  } else if (name == "maze1" || name == "maze2") {
    c.reconstruction = true;
    set_problem(c, iso(dim, {-4.0}, 0.3), iso(dim, {4.0}, 0.3));
    BlurredRectangles walls;
    if (name == "maze1") {
      // one wall with a central gap
      walls.rectangles = {{{-0.4, -6.0}, {0.4, -1.2}}, {{-0.4, 1.2}, {0.4, 6.0}}};
    } else {
      // two staggered walls, gaps at opposite ends
      walls.rectangles = {{{-1.6, -6.0}, {-1.0, 1.5}}, {{1.0, -1.5}, {1.6, 6.0}}};
    }
    c.problem.preference = walls;
    crowd_defaults(c);
    c.plot_window = window(-6.0, 6.0, -6.0, 6.0);
  } else {  // arch1d
    set_problem(c, iso(dim, {0.0}, 0.3), iso(dim, {-4.0}, 1.0));
    c.network.hidden = 10;
    c.train.learning_rate = 0.01;
  }
  c.network.dim = dim;
  if (c.plot_window.dim() == 0) c.plot_window = window_around(c.problem);
  return c;
}

std::optional<double> ground_truth(const Problem& problem) {
  const auto* a = std::get_if<GaussianSpec>(&problem.initial.spec());
  const auto* b = std::get_if<GaussianSpec>(&problem.target.spec());
  if (!a || !b || has_preference(problem.preference)) return std::nullopt;
  return w2_squared_diag_gaussians(*a, *b);
}

Json density_to_json(const Density& density) {
  return std::visit(
      Overloaded{
          [](const GaussianSpec& g) {
            Json j{{"type", "gaussian"}};
            j.update(gaussian_to_json(g));
            return j;
          },
          [](const MixtureSpec& m) {
            return Json{{"type", "mixture"}, {"components", mixture_to_json(m)}};
          },
          [](const UniformBoxSpec& u) {
            return Json{{"type", "uniform"},
                        {"lower", vector_to_json(u.lower)},
                        {"upper", vector_to_json(u.upper)}};
          },
      },
      density.spec());
}

Density density_from_json(const Json& j, int dim) {
  const std::string type = get<std::string>(j.at("type"), "density.type");
  if (type == "gaussian") {
    require_keys(j, "gaussian density", {"type", "mean", "variance"});
    return Density(gaussian_from(j, dim, "gaussian density"));
  }
  if (type == "mixture") {
    require_keys(j, "mixture density", {"type", "components"});
    return Density(mixture_from(j.at("components"), dim, "mixture density"));
  }
  if (type == "uniform") {
    require_keys(j, "uniform density", {"type", "lower", "upper"});
    UniformBoxSpec u{vector_from(j.at("lower"), dim, "uniform.lower"),
                     vector_from(j.at("upper"), dim, "uniform.upper")};
    u.validate();
    return Density(u);
  }
  throw ConfigError("unknown density type '" + type + "' (expected gaussian, mixture, uniform)");
}

Json preference_to_json(const PreferenceSpec& pref) {
  return std::visit(
      Overloaded{
          [](const NoPreference&) { return Json{{"type", "none"}}; },
          [](const GaussianBumps& b) {
            return Json{{"type", "gaussian_bumps"}, {"components", mixture_to_json(b.bumps)}};
          },
          [](const BlurredRectangles& r) {
            Json rects = Json::array();
            for (const auto& rect : r.rectangles) {
              rects.push_back(Json{{"lower", {rect.lower[0], rect.lower[1]}},
                                   {"upper", {rect.upper[0], rect.upper[1]}}});
            }
            return Json{{"type", "rectangles"}, {"bandwidth", r.bandwidth}, {"rectangles", rects}};
          },
      },
      pref);
}

PreferenceSpec preference_from_json(const Json& j) {
  const std::string type = get<std::string>(j.at("type"), "preference.type");
  if (type == "none") return NoPreference{};
  if (type == "gaussian_bumps") {
    require_keys(j, "gaussian_bumps", {"type", "components"});
    return GaussianBumps{mixture_from(j.at("components"), 2, "gaussian_bumps")};
  }
  if (type == "rectangles") {
    require_keys(j, "rectangles", {"type", "bandwidth", "rectangles"});
    BlurredRectangles r;
    if (j.contains("bandwidth")) r.bandwidth = get<double>(j.at("bandwidth"), "bandwidth");
    if (!(r.bandwidth > 0.0)) throw ConfigError("rectangles: bandwidth must be > 0");
    for (const auto& rect : j.at("rectangles")) {
      require_keys(rect, "rectangle", {"lower", "upper"});
      Rectangle q{vector_from(rect.at("lower"), 2, "rectangle.lower"),
                  vector_from(rect.at("upper"), 2, "rectangle.upper")};
      if (!(q.lower.array() < q.upper.array()).all()) {
        throw ConfigError("rectangle: lower must be below upper");
      }
      r.rectangles.push_back(q);
    }
    return r;
  }
  throw ConfigError("unknown preference type '" + type +
                    "' (expected none, gaussian_bumps, rectangles)");
}

ExperimentConfig config_from_json(const Json& doc) {
  require_keys(doc, "config",
               {"preset", "dim", "problem", "network", "hyper", "train", "seeds", "output",
                "trajectory_particles", "plot_window", "note"});
  const int dim = doc.contains("dim") ? get<int>(doc.at("dim"), "dim") : 2;
  ExperimentConfig c;
  if (doc.contains("preset")) {
    c = make_preset(get<std::string>(doc.at("preset"), "preset"), dim);
  } else {
    if (!doc.contains("problem")) throw ConfigError("config: need a preset or a problem section");
    c.dim = dim;
    c.network.dim = dim;
  }

  if (doc.contains("problem")) {
    const Json& p = doc.at("problem");
    require_keys(p, "problem", {"initial", "target", "sampling", "preference", "regularizer_box"});
    if (!doc.contains("preset") && (!p.contains("initial") || !p.contains("target"))) {
      throw ConfigError("problem: explicit problems need initial and target densities");
    }
    if (p.contains("initial")) c.problem.initial = density_from_json(p.at("initial"), dim);
    if (p.contains("target")) c.problem.target = density_from_json(p.at("target"), dim);
    if (p.contains("sampling")) c.problem.sampling = density_from_json(p.at("sampling"), dim);
    if (p.contains("preference")) c.problem.preference = preference_from_json(p.at("preference"));
    if (p.contains("regularizer_box")) {
      const Json& b = p.at("regularizer_box");
      require_keys(b, "regularizer_box", {"lower", "upper"});
      c.problem.regularizer_box = {vector_from(b.at("lower"), dim, "regularizer_box.lower"),
                                   vector_from(b.at("upper"), dim, "regularizer_box.upper")};
    } else {
      c.problem.regularizer_box = default_regularizer_box(c.problem.initial, c.problem.target);
    }
    if (!doc.contains("preset")) c.plot_window = window_around(c.problem);
  }

  if (doc.contains("network")) {
    const Json& n = doc.at("network");
    require_keys(n, "network", {"intervals", "width", "hidden", "architecture"});
    if (n.contains("intervals")) c.network.intervals = get<int>(n.at("intervals"), "network.intervals");
    if (n.contains("width")) c.network.width = get<int>(n.at("width"), "network.width");
    if (n.contains("hidden")) c.network.hidden = get<int>(n.at("hidden"), "network.hidden");
    if (n.contains("architecture")) {
      c.network.architecture =
          architecture_from_string(get<std::string>(n.at("architecture"), "network.architecture"));
    }
  }

  if (doc.contains("hyper")) {
    const Json& h = doc.at("hyper");
    require_keys(h, "hyper",
                 {"kl_weight", "reg_weight", "pref_weight", "particles", "reg_samples", "steps",
                  "chunk", "workers"});
    auto num = [&](const char* key, double& out) {
      if (h.contains(key)) out = get<double>(h.at(key), std::string("hyper.") + key);
    };
    auto integer = [&](const char* key, int& out) {
      if (h.contains(key)) out = get<int>(h.at(key), std::string("hyper.") + key);
    };
    num("kl_weight", c.hyper.kl_weight);
    num("reg_weight", c.hyper.reg_weight);
    num("pref_weight", c.hyper.pref_weight);
    integer("particles", c.hyper.particles);
    integer("reg_samples", c.hyper.reg_samples);
    integer("steps", c.hyper.steps);
    integer("chunk", c.hyper.chunk);
    integer("workers", c.hyper.workers);
  }

  if (doc.contains("train")) {
    const Json& t = doc.at("train");
    require_keys(t, "train",
                 {"iterations", "learning_rate", "decay", "decay_period", "beta1", "beta2",
                  "epsilon", "gradient", "eval_samples"});
    auto num = [&](const char* key, double& out) {
      if (t.contains(key)) out = get<double>(t.at(key), std::string("train.") + key);
    };
    auto integer = [&](const char* key, int& out) {
      if (t.contains(key)) out = get<int>(t.at(key), std::string("train.") + key);
    };
    integer("iterations", c.train.iterations);
    num("learning_rate", c.train.learning_rate);
    num("decay", c.train.decay);
    integer("decay_period", c.train.decay_period);
    num("beta1", c.train.beta1);
    num("beta2", c.train.beta2);
    num("epsilon", c.train.epsilon);
    integer("eval_samples", c.train.eval_samples);
    if (t.contains("gradient")) {
      c.train.path = gradient_path_from_string(get<std::string>(t.at("gradient"), "train.gradient"));
    }
  }

  if (doc.contains("seeds")) c.seeds = get<std::vector<std::uint64_t>>(doc.at("seeds"), "seeds");
  if (doc.contains("output")) c.output = get<std::string>(doc.at("output"), "output");
  if (doc.contains("trajectory_particles")) {
    c.trajectory_particles = get<int>(doc.at("trajectory_particles"), "trajectory_particles");
  }
  if (doc.contains("plot_window")) {
    const Json& w = doc.at("plot_window");
    require_keys(w, "plot_window", {"lower", "upper"});
    const int n = std::min(c.network.dim, 2);
    c.plot_window = {vector_from(w.at("lower"), n, "plot_window.lower"),
                     vector_from(w.at("upper"), n, "plot_window.upper")};
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json doc;
  try {
    doc = Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

Json config_to_json(const ExperimentConfig& c) {
  Json problem{{"initial", density_to_json(c.problem.initial)},
               {"target", density_to_json(c.problem.target)}};
  if (c.problem.sampling) problem["sampling"] = density_to_json(*c.problem.sampling);
  problem["preference"] = preference_to_json(c.problem.preference);
  problem["regularizer_box"] = Json{{"lower", vector_to_json(c.problem.regularizer_box.lower)},
                                    {"upper", vector_to_json(c.problem.regularizer_box.upper)}};
  Json doc;
  if (!c.preset.empty()) doc["preset"] = c.preset;
  doc["dim"] = c.dim;
  doc["problem"] = problem;
  doc["network"] = Json{{"intervals", c.network.intervals},
                        {"width", c.network.width},
                        {"hidden", c.network.hidden},
                        {"architecture", std::string(to_string(c.network.architecture))}};
  doc["hyper"] = Json{{"kl_weight", c.hyper.kl_weight},   {"reg_weight", c.hyper.reg_weight},
                      {"pref_weight", c.hyper.pref_weight}, {"particles", c.hyper.particles},
                      {"reg_samples", c.hyper.reg_samples}, {"steps", c.hyper.steps},
                      {"chunk", c.hyper.chunk},             {"workers", c.hyper.workers}};
  doc["train"] = Json{{"iterations", c.train.iterations},
                      {"learning_rate", c.train.learning_rate},
                      {"decay", c.train.decay},
                      {"decay_period", c.train.decay_period},
                      {"beta1", c.train.beta1},
                      {"beta2", c.train.beta2},
                      {"epsilon", c.train.epsilon},
                      {"gradient", std::string(to_string(c.train.path))},
                      {"eval_samples", c.train.eval_samples}};
  doc["seeds"] = c.seeds;
  doc["output"] = c.output.string();
  doc["trajectory_particles"] = c.trajectory_particles;
  doc["plot_window"] = Json{{"lower", vector_to_json(c.plot_window.lower)},
                            {"upper", vector_to_json(c.plot_window.upper)}};
  if (c.reconstruction) doc["note"] = "obstacle layout is a reconstruction";
  return doc;
}

}  // namespace dynot
