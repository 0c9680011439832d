#pragma once

// Output files and INI configuration for experiment runs.

#include "armcmc/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <fstream>
#include <sstream>

namespace armcmc::experiment {

inline void write_diagnostics_csv(std::ostream& out, std::span<const StepDiagnostics> diags,
                                  const std::vector<std::string>& names) {
  out << "pack_index,zeta,lambda,mode,k_min,acceptance_rate";
  for (const auto& n : names) out << ",maps_" << n;
  for (const auto& n : names) out << ",aps_" << n;
  out << ",wall_ms\n";
  for (const auto& d : diags) {
    out << d.pack_index << ',' << csv::format(d.zeta) << ',' << csv::format(d.lambda) << ',' << to_string(d.mode)
        << ',' << d.k_min << ',' << csv::format(d.acceptance_rate);
    for (Eigen::Index j = 0; j < d.point_maps.size(); ++j) out << ',' << csv::format(d.point_maps[j]);
    for (Eigen::Index j = 0; j < d.point_aps.size(); ++j) out << ',' << csv::format(d.point_aps[j]);
    out << ',' << csv::format(d.wall_ms) << '\n';
  }
}

inline nlohmann::json diagnostics_json(const StepDiagnostics& d) {
  auto vec = [](const ParamVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["pack_index"] = d.pack_index;
  // JSON has no infinity; the first pack reports null.
  j["zeta"] = std::isfinite(d.zeta) ? nlohmann::json(d.zeta) : nlohmann::json(nullptr);
  j["lambda"] = d.lambda;
  j["mode"] = to_string(d.mode);
  j["k_min"] = d.k_min;
  j["acceptance_rate"] = d.acceptance_rate;
  j["point_maps"] = vec(d.point_maps);
  j["point_aps"] = vec(d.point_aps);
  j["wall_ms"] = d.wall_ms;
  return j;
}

inline void write_trace(std::ostream& out, const MethodTrace& t, const std::vector<std::string>& names) {
  out << "sample";
  for (const auto& n : names) out << ',' << n;
  out << ",prediction\n";
  for (std::size_t k = 0; k < t.estimates.size(); ++k) {
    out << k;
    for (Eigen::Index j = 0; j < t.estimates[k].size(); ++j) out << ',' << csv::format(t.estimates[k][j]);
    out << ',' << (k < t.predictions.size() ? csv::format(t.predictions[k]) : std::string()) << '\n';
  }
}

inline void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  write_dataset(dir, result.dataset);
  const auto names = param_names(result.dataset.model);

  for (const auto& t : result.traces) {
    std::ofstream out(dir / ("trace_" + t.name + ".csv"));
    write_trace(out, t, names);
  }
  if (!result.diagnostics.empty()) {
    std::ofstream csv_out(dir / "armcmc_diagnostics.csv");
    write_diagnostics_csv(csv_out, result.diagnostics, names);
    std::ofstream jsonl(dir / "armcmc_diagnostics.jsonl");
    for (const auto& d : result.diagnostics) jsonl << diagnostics_json(d).dump() << '\n';

    std::ofstream grid(dir / "posterior_grid.csv");
    grid << "pack_index,parameter,bin_center,density\n";
    for (const auto& r : result.posterior_grid)
      grid << r.pack << ',' << names[r.parameter] << ',' << csv::format(r.center) << ',' << csv::format(r.density)
           << '\n';
  }
  std::ofstream metrics(dir / "metrics.csv");
  write_metrics(metrics, result.report);
}

// ---------------------------------------------------------------------------
// INI configuration

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& item : csv::split(s)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline ParamVector vector_value(const std::string& key, const std::string& s, Eigen::Index dim) {
  const auto items = list(s);
  if (static_cast<Eigen::Index>(items.size()) != dim)
    throw Error("config: '" + key + "' needs " + std::to_string(dim) + " values");
  ParamVector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = csv::parse_double(items[static_cast<std::size_t>(i)]);
  return v;
}

inline bool bool_value(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error("config: '" + key + "' is not a boolean");
}

}  // namespace detail

/**
 * Parses an INI run description. `[run] preset` (or `model`) selects the
 * starting preset; every other key overrides one field of it.
 *
 *   [run]      preset model methods seed duration output dataset
 *   [armcmc]   epsilon delta zeta_threshold rho noise_mean noise_sigma pack_size
 *              prior_mean prior_scale proposal_scale gaussian_center mismatch
 *              max_kde_centers reestimate_noise
 *   [rls]      input_scale initial_covariance saturation_span
 *   [pf]       particles jitter_fraction resample
 *   [mcmc_plain] variant samples
 *   [actuator] noise_pressure noise_pressure_rate schedule
 *   [needle]   stiffness damping exponent cutting noise_sigma amplitude period offset
 *   [heatmap]  bins lower upper
 */
inline RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  auto get = [&](const std::string& path) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(boost::property_tree::ptree::path_type(path, '.')))
      return detail::trim(*v);
    return std::nullopt;
  };
  auto number = [&](const std::string& path) -> std::optional<double> {
    if (auto v = get(path)) return csv::parse_double(*v);
    return std::nullopt;
  };
  auto count = [&](const std::string& path) -> std::optional<std::size_t> {
    if (auto v = number(path)) {
      if (*v < 0 || *v != std::floor(*v)) throw Error("config: '" + path + "' must be a non-negative integer");
      return static_cast<std::size_t>(*v);
    }
    return std::nullopt;
  };

  std::string base = get("run.preset").value_or(get("run.model").value_or(""));
  if (base.empty()) throw Error("config: [run] needs 'preset' or 'model'");
  RunConfig cfg = preset(base);
  if (auto m = get("run.model")) cfg.model = parse_model(*m);
  const Eigen::Index dim = static_cast<Eigen::Index>(param_names(cfg.model).size());

  if (auto v = get("run.methods")) {
    cfg.methods.clear();
    for (const auto& m : detail::list(*v)) cfg.methods.push_back(parse_method(m));
  }
  if (auto v = count("run.seed")) cfg.seed = *v;
  if (auto v = number("run.duration")) cfg.duration = *v;
  if (auto v = get("run.output")) cfg.output_dir = *v;
  if (auto v = get("run.dataset")) cfg.dataset_dir = *v;

  auto& a = cfg.armcmc;
  if (auto v = number("armcmc.epsilon")) a.pr.epsilon = *v;
  if (auto v = number("armcmc.delta")) a.pr.delta = *v;
  if (auto v = number("armcmc.zeta_threshold")) a.zeta_threshold = *v;
  if (auto v = number("armcmc.rho")) a.rho = *v;
  if (auto v = number("armcmc.noise_mean")) a.noise = NoiseModel::gaussian(*v, a.noise.sigma);
  if (auto v = get("armcmc.noise_sigma")) {
    if (*v == "auto")
      cfg.armcmc_noise_sigma.reset();
    else
      cfg.armcmc_noise_sigma = csv::parse_double(*v);
  }
  if (auto v = count("armcmc.pack_size")) a.pack_size = *v;
  if (auto v = get("armcmc.prior_mean")) a.prior.mean = detail::vector_value("prior_mean", *v, dim);
  if (auto v = get("armcmc.prior_scale")) a.prior.scale = detail::vector_value("prior_scale", *v, dim);
  if (auto v = get("armcmc.proposal_scale")) a.proposal_scale = detail::vector_value("proposal_scale", *v, dim);
  if (auto v = get("armcmc.gaussian_center")) {
    if (*v == "point_estimate")
      a.gaussian_center = GaussianCenter::point_estimate;
    else if (*v == "chain_state")
      a.gaussian_center = GaussianCenter::chain_state;
    else
      throw Error("config: gaussian_center must be 'point_estimate' or 'chain_state'");
  }
  if (auto v = get("armcmc.mismatch")) {
    if (*v == "signed")
      a.mismatch = MismatchStatistic::signed_mean;
    else if (*v == "absolute")
      a.mismatch = MismatchStatistic::absolute_mean;
    else
      throw Error("config: mismatch must be 'signed' or 'absolute'");
  }
  if (auto v = count("armcmc.max_kde_centers")) a.max_kde_centers = *v;
  if (auto v = get("armcmc.reestimate_noise")) a.reestimate_noise = detail::bool_value("reestimate_noise", *v);

  if (auto v = get("rls.input_scale")) cfg.rls.input_scale = detail::vector_value("input_scale", *v, dim);
  if (auto v = number("rls.initial_covariance")) cfg.rls.initial_covariance = *v;
  if (auto v = number("rls.saturation_span")) cfg.rls.saturation_span = *v;

  if (auto v = count("pf.particles")) cfg.pf.particles = *v;
  if (auto v = number("pf.jitter_fraction")) cfg.pf.jitter_fraction = *v;
  if (auto v = get("pf.resample")) {
    if (*v == "every_step")
      cfg.pf.policy = ResamplePolicy::every_step;
    else if (*v == "ess")
      cfg.pf.policy = ResamplePolicy::ess_triggered;
    else
      throw Error("config: resample must be 'every_step' or 'ess'");
  }

  if (auto v = get("mcmc_plain.variant")) {
    if (*v == "reduced_samples")
      cfg.mcmc_plain.variant = McmcVariant::reduced_samples;
    else if (*v == "doubled_pack")
      cfg.mcmc_plain.variant = McmcVariant::doubled_pack;
    else
      throw Error("config: mcmc_plain variant must be 'reduced_samples' or 'doubled_pack'");
  }
  if (auto v = count("mcmc_plain.samples")) cfg.mcmc_plain.samples = *v;

  if (auto v = number("actuator.noise_pressure")) cfg.actuator.noise_pressure = *v;
  if (auto v = number("actuator.noise_pressure_rate")) cfg.actuator.noise_pressure_rate = *v;
  if (auto v = get("actuator.schedule")) {
    // "duration:u_c:u_d; duration:u_c:u_d; ..."
    cfg.actuator.schedule.clear();
    for (const auto& seg : csv::split(*v, ';')) {
      const auto parts = csv::split(detail::trim(seg), ':');
      if (parts.size() != 3) throw Error("config: schedule segments are duration:u_c:u_d");
      cfg.actuator.schedule.push_back(
          {csv::parse_double(parts[0]), csv::parse_double(parts[1]), csv::parse_double(parts[2])});
    }
  }

  auto& n = cfg.needle;
  if (auto v = number("needle.stiffness")) n.stiffness = *v;
  if (auto v = number("needle.damping")) n.damping = *v;
  if (auto v = number("needle.exponent")) n.exponent = *v;
  if (auto v = number("needle.cutting")) n.cutting = *v;
  if (auto v = number("needle.noise_sigma")) n.noise_sigma = *v;
  if (auto v = number("needle.amplitude")) n.trajectory.amplitude = *v;
  if (auto v = number("needle.period")) n.trajectory.period = *v;
  if (auto v = number("needle.offset")) n.trajectory.offset = *v;

  if (auto v = count("heatmap.bins")) cfg.heatmap.bins = *v;
  if (auto v = get("heatmap.lower")) cfg.heatmap.lower = detail::vector_value("lower", *v, dim);
  if (auto v = get("heatmap.upper")) cfg.heatmap.upper = detail::vector_value("upper", *v, dim);

  validate(cfg.armcmc);
  if (cfg.methods.empty()) throw Error("config: no methods selected");
  if (!(cfg.duration > 0.0)) throw Error("config: duration must be positive");
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("config: cannot open " + file.string());
  return parse_config(in);
}

}  // namespace armcmc::experiment
