// Command-line front end: phantom, train, fuse, visualize, evaluate.
//
// Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.
// Every failure prints exactly one stderr line `error[<tag>]: <message>`.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ssimfuse/ssimfuse.hpp"

namespace fs = std::filesystem;
using namespace ssimfuse;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(const std::string& tag, const std::string& msg, int code) {
  std::cerr << "error[" << tag << "]: " << one_line(msg) << std::endl;
  return code;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !(os << text)) throw IoError("cannot write '" + path.string() + "'");
}

/// `--pair ANAT FUNC`, or `--pair STEM` meaning STEM_anat / STEM_func with
/// a .png or .pgm extension.
ImagePair load_pair_arg(const std::vector<std::string>& args) {
  if (args.size() == 2) return load_pair(args[0], args[1]);
  for (const char* ext : {".png", ".pgm"}) {
    const fs::path a = args[0] + "_anat" + ext, f = args[0] + "_func" + ext;
    if (fs::exists(a) && fs::exists(f)) return load_pair(a, f);
  }
  throw IoError("no '" + args[0] + "_anat/_func' image pair (.png or .pgm) found");
}

struct PhantomOpts {
  PhantomSpec spec;
  std::string out;
};

struct TrainOpts {
  std::string config, data, out;
  std::optional<double> lambda, lr;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct FuseOpts {
  std::string checkpoint, out = ".";
  std::vector<std::string> pair;
};

struct VisualizeOpts {
  std::string checkpoint, out = ".";
  std::vector<std::string> pair;
  double omega = 0.6;
  bool magnitude = false;
};

struct EvaluateOpts {
  std::string checkpoint, data, report, lambda_grid, omega_grid;
};

int run_phantom(const PhantomOpts& o) {
  const auto pairs = write_phantoms(o.spec, o.out);
  std::cout << "wrote " << 2 * pairs.size() << " images to " << o.out << "\n";
  return 0;
}

int run_train(const TrainOpts& o) {
  RunConfig rc;
  if (!o.config.empty()) {
    std::ifstream is(o.config);
    if (!is) throw ConfigError("cannot open config '" + o.config + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + o.config + "' is not valid JSON: " + e.what());
    }
    rc = RunConfig::from_json(j);
  }
  if (!o.data.empty()) rc.data_dir = o.data;
  if (!o.out.empty()) rc.output_dir = o.out;
  if (o.lambda) rc.fusion.lambda = *o.lambda;
  if (o.epochs) rc.fusion.epochs = *o.epochs;
  if (o.lr) rc.fusion.lr = *o.lr;
  if (o.seed) rc.fusion.seed = *o.seed;
  if (rc.data_dir.empty()) throw ConfigError("no data directory: pass --data or set data_dir in the config");
  if (rc.output_dir.empty()) throw ConfigError("no output directory: pass --out or set output_dir in the config");
  rc.fusion.validate();

  const fs::path out = rc.output_dir;
  rc.checkpoint = (out / "checkpoint.bin").string();
  const auto dataset = load_dataset(rc.data_dir);
  ensure_dir(out);
  write_text(out / "effective_config.json", rc.to_json().dump(2) + "\n");

  const auto result = train(rc.fusion, dataset, rc.fusion.seed, [&](const TrainRecord& r) {
    if (!o.quiet)
      std::printf("epoch %4d  l_total %.6f  l_ssim_a %.6f  l_ssim_b %.6f  l_l2 %.6f\n", r.epoch, r.mean.l_total,
                  r.mean.l_ssim_a, r.mean.l_ssim_b, r.mean.l_l2);
  });
  save_checkpoint(result.params, rc.fusion, rc.checkpoint);
  std::ofstream csv(out / "loss.csv", std::ios::trunc);
  write_loss_csv(csv, result.history);
  if (!csv) throw IoError("cannot write '" + (out / "loss.csv").string() + "'");
  std::cout << "checkpoint " << rc.checkpoint << "\n";
  return 0;
}

int run_fuse(const FuseOpts& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const ImagePair pair = load_pair_arg(o.pair);
  const Image f = fuse(ck.params, ck.config, pair);
  ensure_dir(o.out);
  const fs::path path = fs::path(o.out) / (pair.id + "_fused.png");
  write_png(path, f);
  std::cout << path.string() << "\n";
  return 0;
}

int run_visualize(const VisualizeOpts& o) {
  if (!(o.omega >= 0 && o.omega <= 1)) throw ArgumentError("--omega must lie in [0,1]");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const ImagePair pair = load_pair_arg(o.pair);
  ColorComposite c = composite(input_gradients(ck.params, ck.config, pair), o.omega, o.magnitude);
  c.lambda = ck.config.lambda;
  c.source = o.checkpoint;
  ensure_dir(o.out);
  const fs::path path = fs::path(o.out) / (pair.id + "_lambda" + format_value(c.lambda) + "_omega" +
                                           format_value(o.omega) + "_grad.png");
  write_png(path, c.to_rgb_image());
  std::cout << path.string() << "\n";
  return 0;
}

int run_evaluate(const EvaluateOpts& o) {
  const auto files = list_pairs(o.data);
  if (files.empty()) throw IoError("no image pairs found in '" + o.data + "'");
  const bool templated = o.checkpoint.find("{lambda}") != std::string::npos;

  std::vector<double> lambdas, omegas;
  std::optional<Checkpoint> single;
  if (!templated) single = load_checkpoint(o.checkpoint);
  if (!o.lambda_grid.empty())
    lambdas = parse_grid(o.lambda_grid);
  else if (single)
    lambdas = {single->config.lambda};
  else
    throw ArgumentError("--lambda-grid is required when --checkpoint contains {lambda}");
  omegas = o.omega_grid.empty() ? std::vector<double>{single ? single->config.omega : 0.6} : parse_grid(o.omega_grid);

  const auto cells = evaluate_grid(o.checkpoint, pair_sources(files), lambdas, omegas, [&](const std::string& p) {
    return single ? *single : load_checkpoint(p);
  });
  std::size_t failed = 0;
  for (const auto& f : cells.front().failures)
    std::cerr << "warning[" << f.tag << "]: pair '" << f.pair_id << "': " << one_line(f.message) << "\n";
  for (const auto& c : cells) failed = std::max(failed, c.failures.size());

  print_report_table(std::cout, cells);
  if (!o.report.empty()) {
    const fs::path report = o.report;
    if (report.has_parent_path()) ensure_dir(report.parent_path());
    std::ofstream os(report, std::ios::trunc);
    write_report_csv(os, cells);
    std::ofstream ps(report.string() + ".pairs.csv", std::ios::trunc);
    write_pairs_csv(ps, cells);
    if (!os || !ps) throw IoError("cannot write report '" + report.string() + "'");
  }
  if (failed == files.size()) throw IoError("every pair failed to evaluate");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised MRI/PET image fusion: train, fuse, visualize, evaluate"};
  app.require_subcommand(1);

  PhantomOpts ph;
  auto* phantom = app.add_subcommand("phantom", "Write synthetic anatomical/functional phantom pairs");
  phantom->add_option("--out", ph.out, "Output directory")->required();
  phantom->add_option("--count", ph.spec.count, "Number of pairs")->capture_default_str();
  phantom->add_option("--width", ph.spec.width, "Image width")->capture_default_str();
  phantom->add_option("--height", ph.spec.height, "Image height")->capture_default_str();
  phantom->add_option("--seed", ph.spec.seed, "Generator seed")->capture_default_str();
  phantom->add_option("--shapes", ph.spec.shapes, "Anatomical shapes per image")->capture_default_str();
  phantom->add_option("--blobs", ph.spec.blobs, "Functional uptake blobs per image")->capture_default_str();
  phantom->add_option("--texture", ph.spec.texture_amplitude, "Texture amplitude")->capture_default_str();
  phantom->add_option("--blur-sigma", ph.spec.blur_sigma, "Functional blur sigma (px)")->capture_default_str();
  phantom->add_option("--prefix", ph.spec.prefix, "File name prefix")->capture_default_str();

  TrainOpts tr;
  auto* trainc = app.add_subcommand("train", "Train a fusion network on a directory of pairs");
  trainc->add_option("--config", tr.config, "JSON run configuration");
  trainc->add_option("--data", tr.data, "Directory of <id>_anat/<id>_func images");
  trainc->add_option("--out", tr.out, "Run directory for checkpoint.bin, loss.csv, effective_config.json");
  trainc->add_option("--lambda", tr.lambda, "SSIM weight in [0,1]");
  trainc->add_option("--epochs", tr.epochs, "Training epochs");
  trainc->add_option("--lr", tr.lr, "Adam learning rate");
  trainc->add_option("--seed", tr.seed, "Initialization and shuffle seed");
  trainc->add_flag("--quiet", tr.quiet, "Do not print per-epoch losses");

  FuseOpts fu;
  auto* fusec = app.add_subcommand("fuse", "Fuse one pair with a trained checkpoint");
  fusec->add_option("--checkpoint", fu.checkpoint, "Checkpoint file")->required();
  fusec->add_option("--pair", fu.pair, "ANAT FUNC files, or a STEM with STEM_anat/STEM_func")
      ->required()
      ->expected(1, 2);
  fusec->add_option("--out", fu.out, "Output directory")->capture_default_str();

  VisualizeOpts vi;
  auto* viz = app.add_subcommand("visualize", "Colour composite of input gradient maps");
  viz->add_option("--checkpoint", vi.checkpoint, "Checkpoint file")->required();
  viz->add_option("--pair", vi.pair, "ANAT FUNC files, or a STEM with STEM_anat/STEM_func")->required()->expected(1, 2);
  viz->add_option("--omega", vi.omega, "Saturation factor in [0,1]")->capture_default_str();
  viz->add_option("--out", vi.out, "Output directory")->capture_default_str();
  viz->add_flag("--magnitude", vi.magnitude, "Normalize gradient magnitudes instead of signed values");

  EvaluateOpts ev;
  auto* evalc = app.add_subcommand("evaluate", "Score fused outputs with Q_SSIM and Q_G");
  evalc->add_option("--checkpoint", ev.checkpoint, "Checkpoint file; may contain {lambda}")->required();
  evalc->add_option("--data", ev.data, "Directory of pairs")->required();
  evalc->add_option("--lambda-grid", ev.lambda_grid, "start:stop:step or comma list");
  evalc->add_option("--omega-grid", ev.omega_grid, "start:stop:step or comma list");
  evalc->add_option("--report", ev.report, "CSV report path (per-pair rows go to <report>.pairs.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitUsage);
  }

  try {
    if (*phantom) return run_phantom(ph);
    if (*trainc) return run_train(tr);
    if (*fusec) return run_fuse(fu);
    if (*viz) return run_visualize(vi);
    if (*evalc) return run_evaluate(ev);
  } catch (const ConfigError& e) {
    return fail(e.tag(), e.what(), kExitUsage);
  } catch (const ArgumentError& e) {
    return fail(e.tag(), e.what(), kExitUsage);
  } catch (const Error& e) {
    return fail(e.tag(), e.what(), kExitRuntime);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kExitRuntime);
  }
  return fail("usage", "no subcommand", kExitUsage);
}
