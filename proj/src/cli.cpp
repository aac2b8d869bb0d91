#include "ecm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "ecm/checkpoint.hpp"
#include "ecm/data.hpp"
#include "ecm/errors.hpp"
#include "ecm/gradcheck_suite.hpp"
#include "ecm/io/flow.hpp"
#include "ecm/io/image.hpp"
#include "ecm/metrics.hpp"
#include "ecm/synthesis.hpp"
#include "ecm/train.hpp"

namespace ecm {
namespace {

namespace fs = std::filesystem;

// --config plus one --<key> override per configuration key. Keys with
// underscores also answer to the dashed spelling (--D-initial).
struct ConfigArgs {
  std::string file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key=value configuration file");
    for (const auto& key : config_keys()) {
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      options.emplace_back(key, app->add_option(names, values[key], "override " + key));
    }
  }

  RunConfig resolve() const {
    std::map<std::string, std::string> overrides;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) overrides[key] = values.at(key);
    }
    return resolve_config(file, overrides);
  }
};

std::unique_ptr<InterpolationModel> make_model(const RunConfig& config, const std::string& checkpoint) {
  auto model = std::make_unique<InterpolationModel>(config);
  if (!checkpoint.empty()) load_parameters(checkpoint, model->parameters());
  return model;
}

Tensor load_frame(const fs::path& path, DType dtype) { return image_to_tensor(read_png(path), dtype); }

void save_frame(const fs::path& path, const Tensor& t) { write_png(path, tensor_to_image(t)); }

void save_flow(const fs::path& path, const Tensor& t) { write_flo(path, tensor_to_flow(t)); }

std::string sample_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

void require_same_size(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("frames differ in size: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void dump_levels(const fs::path& dir, const std::vector<LevelTrace>& trace) {
  std::ofstream csv(dir / "cost_stats.csv");
  csv << "level,direction,min,max,mean\n";
  csv.precision(9);
  for (const auto& lt : trace) {
    const std::string l = std::to_string(lt.level);
    save_flow(dir / ("level" + l + "_flow01.flo"), lt.flow01);
    save_flow(dir / ("level" + l + "_flow10.flo"), lt.flow10);
    csv << l << ",01," << lt.cost01.min << ',' << lt.cost01.max << ',' << lt.cost01.mean << '\n';
    csv << l << ",10," << lt.cost10.min << ',' << lt.cost10.max << ',' << lt.cost10.mean << '\n';
  }
  if (!csv) throw IoError("cannot write " + (dir / "cost_stats.csv").string());
}

void dump_intermediates(const fs::path& dir, const SynthesisBundle& b) {
  fs::create_directories(dir);
  dump_levels(dir, b.trace);
  save_flow(dir / "flow01.flo", b.flow01.value());
  save_flow(dir / "flow10.flo", b.flow10.value());
  save_flow(dir / "flow_t0.flo", b.flow_t0.value());
  save_flow(dir / "flow_t1.flo", b.flow_t1.value());
  const Tensor& m = b.mask.value();
  std::vector<float> mask(static_cast<std::size_t>(m.numel() / m.dim(0)));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<float>(m.at(static_cast<std::int64_t>(i)));
  write_gray_png(dir / "mask.png", m.dim(2), m.dim(3), mask);
  save_frame(dir / "warped0.png", b.warped0.value());
  save_frame(dir / "warped1.png", b.warped1.value());
  save_frame(dir / "blend.png", b.blend.value());
  save_frame(dir / "refine.png", b.refine.value());
}

struct SampleRow {
  std::string name;
  double t = 0.5;
};

std::vector<SampleRow> read_meta(const fs::path& dir) {
  std::ifstream in(dir / "meta.csv");
  if (!in) throw IoError("cannot read " + (dir / "meta.csv").string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("sample,t", 0) != 0) throw IoError("unexpected header in " + (dir / "meta.csv").string());
  std::vector<SampleRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    SampleRow r;
    std::string t;
    std::getline(fields, r.name, ',');
    std::getline(fields, t, ',');
    try {
      r.t = std::stod(t);
    } catch (const std::exception&) {
      throw IoError("bad time '" + t + "' in " + (dir / "meta.csv").string());
    }
    rows.push_back(r);
  }
  return rows;
}

int cmd_interpolate(const RunConfig& c, const std::string& f0, const std::string& f1, const std::string& ckpt,
                    const std::string& out_path, const std::string& dump, std::ostream& out) {
  auto model = make_model(c, ckpt);
  const Tensor i0 = load_frame(f0, c.dtype), i1 = load_frame(f1, c.dtype);
  require_same_size(i0, i1);
  Tape tape;
  const auto b = model->interpolate(tape.constant(i0), tape.constant(i1), c.t, !dump.empty());
  save_frame(out_path, b.refine.value());
  if (!dump.empty()) dump_intermediates(dump, b);
  out << "wrote " << out_path << " (t = " << c.t << ")\n";
  return kExitOk;
}

int cmd_estimate(const RunConfig& c, const std::string& f0, const std::string& f1, const std::string& ckpt,
                 const std::string& prefix, const std::string& dump, std::ostream& out) {
  auto model = make_model(c, ckpt);
  const Tensor i0 = load_frame(f0, c.dtype), i1 = load_frame(f1, c.dtype);
  require_same_size(i0, i1);
  Tape tape;
  const BiFlow bi = model->estimator().estimate(tape.constant(i0), tape.constant(i1), !dump.empty());
  for (const auto& [suffix, var] : {std::pair{"_01", bi.flow01}, std::pair{"_10", bi.flow10}}) {
    const FlowField f = tensor_to_flow(var.value());
    write_flo(prefix + suffix + ".flo", f);
    write_png(prefix + suffix + ".png", flow_to_color(f));
  }
  if (!dump.empty()) {
    fs::create_directories(dump);
    dump_levels(dump, bi.trace);
  }
  out << "wrote " << prefix << "_01.flo, " << prefix << "_10.flo and colour renderings\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c, const std::string& dir, const std::string& init, int log_every, std::ostream& out) {
  fs::create_directories(dir);
  auto model = make_model(c, init);
  {
    std::ofstream cfg(fs::path(dir) / "config.txt");
    cfg << format_config(c);
    if (!cfg) throw IoError("cannot write " + (fs::path(dir) / "config.txt").string());
  }
  TrainOptions o;
  o.checkpoint = fs::path(dir) / "checkpoint.ecm";
  o.curve_csv = fs::path(dir) / "loss.csv";
  o.on_step = [&](const StepRecord& r) {
    if (log_every > 0 && (r.step % log_every == 0 || r.step == c.steps)) {
      out << "step " << r.step << "/" << c.steps << "  l_blend " << r.l_blend << "  l_refine " << r.l_refine
          << "  l_total " << r.l_total << "  lr " << r.lr << '\n';
    }
  };
  train(*model, o);
  out << "wrote " << o.checkpoint.string() << " and " << o.curve_csv.string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const std::string& data, const std::string& pred, const std::string& ckpt,
             const std::string& csv_path, std::ostream& out) {
  const auto rows = read_meta(data);
  std::unique_ptr<InterpolationModel> model;
  if (pred.empty()) model = make_model(c, ckpt);
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "sample,psnr,ssim,epe\n";
  csv.precision(9);
  double sp = 0, ss = 0, se = 0;
  for (const auto& row : rows) {
    const fs::path base = fs::path(data) / row.name;
    const Tensor gt = load_frame(base.string() + "_gt.png", DType::kFloat64);
    const Tensor gt_flow = flow_to_tensor(read_flo(base.string() + "_flow01.flo"), DType::kFloat64);
    Tensor frame, flow;
    if (!pred.empty()) {
      const fs::path p = fs::path(pred) / row.name;
      frame = load_frame(p.string() + "_gt.png", DType::kFloat64);
      flow = flow_to_tensor(read_flo(p.string() + "_flow01.flo"), DType::kFloat64);
    } else {
      const Tensor i0 = load_frame(base.string() + "_frame0.png", c.dtype);
      const Tensor i1 = load_frame(base.string() + "_frame1.png", c.dtype);
      Tape tape;
      const auto b = model->interpolate(tape.constant(i0), tape.constant(i1), row.t);
      // Quantize like a written frame so both sides see the same precision.
      frame = b.refine.value().cast(DType::kFloat64);
      for (auto& v : frame.data<double>()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      flow = b.flow01.value().cast(DType::kFloat64);
    }
    const auto r = evaluate(frame, gt, flow, gt_flow);
    csv << row.name << ',' << r.mean_psnr << ',' << r.mean_ssim << ',' << r.mean_epe << '\n';
    sp += r.mean_psnr;
    ss += r.mean_ssim;
    se += r.mean_epe;
  }
  const double n = std::max<double>(1.0, static_cast<double>(rows.size()));
  out << rows.size() << " samples  psnr " << sp / n << "  ssim " << ss / n << "  epe " << se / n << '\n';
  return kExitOk;
}

int cmd_gen_data(const RunConfig& c, const std::string& dir, int count, std::ostream& out) {
  if (count < 1) throw ConfigError("count", "must be positive");
  fs::create_directories(dir);
  const MotionKind kind = parse_motion(c.motion);
  RunConfig f64 = c;
  f64.dtype = DType::kFloat64;
  std::ofstream meta(fs::path(dir) / "meta.csv");
  meta << "sample,t,kind\n";
  meta.precision(17);
  for (int i = 0; i < count; ++i) {
    // A stream apart from the training batches, which use steps >= 1.
    const auto s = gen_synthetic(sample_seed(c.seed, -1, i), kind, c.patch, c.patch, c.max_disp, f64);
    const fs::path base = fs::path(dir) / sample_name(i);
    save_frame(base.string() + "_frame0.png", s.frame0);
    save_frame(base.string() + "_frame1.png", s.frame1);
    save_frame(base.string() + "_gt.png", s.frame_t);
    save_flow(base.string() + "_flow01.flo", s.flow01);
    meta << sample_name(i) << ',' << s.t << ',' << to_string(kind) << '\n';
  }
  if (!meta) throw IoError("cannot write " + (fs::path(dir) / "meta.csv").string());
  out << "wrote " << count << " " << to_string(kind) << " samples to " << dir << '\n';
  return kExitOk;
}

int cmd_gradcheck(const std::string& op, int seeds, std::ostream& out) {
  SuiteOptions o;
  o.seeds = seeds;
  const auto reports = run_gradcheck(op, o);
  bool ok = true;
  for (const auto& r : reports) {
    char line[200];
    std::snprintf(line, sizeof line, "%-24s max_rel_err %.3e  seeds %d/%d  %6.2fs  %s\n", r.name.c_str(),
                  r.max_rel_error, r.seeds_clean, r.seeds_tried, r.seconds, r.passed ? "PASS" : "FAIL");
    out << line;
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bidirectional flow estimation and video frame interpolation", "ecmnet"};
  app.require_subcommand(1);

  std::string frame0, frame1, checkpoint, output, dump, prefix, out_dir, data_dir, pred_dir, op = "all";
  int log_every = 50, count = 10, seeds = 20;

  auto* interp = app.add_subcommand("interpolate", "synthesize the frame at time t between two PNG frames");
  ConfigArgs interp_cfg;
  interp->add_option("--frame0", frame0, "first frame (PNG)")->required();
  interp->add_option("--frame1", frame1, "second frame (PNG)")->required();
  interp->add_option("--checkpoint", checkpoint, "trained parameters; fresh initialization if omitted");
  interp->add_option("--out", output, "output PNG")->required();
  interp->add_option("--dump-intermediates", dump, "directory for per-level flows, cost stats and stage outputs");
  interp_cfg.attach(interp);

  auto* estimate = app.add_subcommand("estimate-flow", "bidirectional flow between two PNG frames");
  ConfigArgs estimate_cfg;
  estimate->add_option("--frame0", frame0, "first frame (PNG)")->required();
  estimate->add_option("--frame1", frame1, "second frame (PNG)")->required();
  estimate->add_option("--checkpoint", checkpoint, "trained parameters; fresh initialization if omitted");
  estimate->add_option("--out-prefix", prefix, "writes PREFIX_01.flo, PREFIX_10.flo and .png renderings")->required();
  estimate->add_option("--dump-levels", dump, "directory for per-level flows and cost stats");
  estimate_cfg.attach(estimate);

  auto* train_cmd = app.add_subcommand("train", "train on generated sequences");
  ConfigArgs train_cfg;
  train_cmd->add_option("--out-dir", out_dir, "receives checkpoint.ecm, loss.csv and config.txt")->required();
  train_cmd->add_option("--init-checkpoint", checkpoint, "start from these parameters");
  train_cmd->add_option("--log-every", log_every, "progress line interval in steps (0 silences)");
  train_cfg.attach(train_cmd);

  auto* eval = app.add_subcommand("eval", "PSNR, SSIM and EPE over a generated sample directory");
  ConfigArgs eval_cfg;
  eval->add_option("--data", data_dir, "directory written by gen-data")->required();
  eval->add_option("--pred", pred_dir, "score predictions laid out like --data instead of running the model");
  eval->add_option("--checkpoint", checkpoint, "trained parameters; fresh initialization if omitted");
  eval->add_option("--out", output, "CSV with columns sample,psnr,ssim,epe")->required();
  eval_cfg.attach(eval);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of the differentiable operations");
  ConfigArgs grad_cfg;
  grad->add_option("op", op, "operation name or 'all'");
  grad->add_option("--seeds", seeds, "clean random instances per operation")->check(CLI::PositiveNumber);
  grad_cfg.attach(grad);

  auto* gen = app.add_subcommand("gen-data", "write generated samples with ground truth");
  ConfigArgs gen_cfg;
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of samples");
  gen_cfg.attach(gen);

  auto* range = app.add_subcommand("search-range", "print the per-level search range R_l in input pixels");
  ConfigArgs range_cfg;
  range_cfg.attach(range);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (interp->parsed()) return cmd_interpolate(interp_cfg.resolve(), frame0, frame1, checkpoint, output, dump, out);
    if (estimate->parsed()) return cmd_estimate(estimate_cfg.resolve(), frame0, frame1, checkpoint, prefix, dump, out);
    if (train_cmd->parsed()) return cmd_train(train_cfg.resolve(), out_dir, checkpoint, log_every, out);
    if (eval->parsed()) return cmd_eval(eval_cfg.resolve(), data_dir, pred_dir, checkpoint, output, out);
    if (grad->parsed()) {
      grad_cfg.resolve();
      return cmd_gradcheck(op, seeds, out);
    }
    if (gen->parsed()) return cmd_gen_data(gen_cfg.resolve(), out_dir, count, out);
    if (range->parsed()) {
      const auto r = search_range(range_cfg.resolve());
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? " " : "") << r[i];
      out << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace ecm
