#include "oarseg/cli.hpp"

#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "oarseg/io.hpp"
#include "oarseg/locator.hpp"
#include "oarseg/log.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/nn/gradcheck.hpp"
#include "oarseg/phantom.hpp"
#include "oarseg/preprocess.hpp"
#include "oarseg/segpipe.hpp"

namespace oarseg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigEnv = "OARSEG_CONFIG";

std::string structure_list() {
  std::string s;
  for (StructureId id : kAllStructures) s += (s.empty() ? "" : "|") + std::string(structure_name(id));
  return s;
}

CLI::Validator structure_validator() {
  return CLI::Validator(
      [](std::string& v) -> std::string {
        return parse_structure(v) ? std::string{} : "unknown structure '" + v + "' (" + structure_list() + ")";
      },
      "STRUCTURE");
}

StructureId structure_of(const std::string& s) { return *parse_structure(s); }

PipelineConfig resolve_config(const std::string& flag) {
  if (!flag.empty()) return load_config(flag);
  if (const char* env = std::getenv(kConfigEnv); env && *env) return load_config(env);
  return PipelineConfig{};
}

std::string dims_str(const Dims& d) {
  return std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.z);
}

std::string box_line(const BBox& b) {
  return "min " + std::to_string(b.min.x) + "," + std::to_string(b.min.y) + "," +
         std::to_string(b.min.z) + " size " + dims_str(b.size);
}

Dims to_dims(const std::vector<int64_t>& v, const std::string& flag) {
  if (v.size() != 3) throw ConfigError(flag + ": expected three comma-separated integers");
  for (int64_t x : v)
    if (x < 1) throw ConfigError(flag + ": values must be >= 1");
  return {v[0], v[1], v[2]};
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  int cases = 1;
  uint64_t seed = 0;
  int first = 0;
  std::vector<int64_t> size{64, 64, 64};
};

void cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  PhantomSpec spec = default_phantom_spec();
  spec.dims = to_dims(a.size, "--size");
  spec.seed = a.seed;
  spec.validate();
  for (int i = 0; i < a.cases; ++i) {
    const int index = a.first + i;
    const fs::path dir = fs::path(a.out) / case_dir_name(index);
    write_case(generate_case(spec, static_cast<uint64_t>(index)), dir);
    out << dir.string() << "\n";
  }
}

// ---- preprocess ------------------------------------------------------------

struct PreprocessArgs {
  std::string in, out, structure, config;
};

void cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.config);
  const StructureId id = structure_of(a.structure);
  const CaseData c = read_case(a.in);
  FramedCase fc = frame_case(c.image, nullptr, cfg, id, c.id);
  const fs::path dir(a.out);
  fs::create_directories(dir / "structures");
  write_volume(fc.image, dir / "image.nrrd");
  for (const auto& [sid, m] : c.masks) {
    const Mask framed = frame_case(c.image, &m, cfg, id).gt;
    write_mask(framed, dir / "structures" / (std::string(structure_name(sid)) + ".nrrd"));
  }
  out << "crop " << box_line(fc.crop) << " iso " << dims_str(fc.iso_dims) << "\n";
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string stage, structure, data, out, config, loss_trace;
  int epochs = -1;
  int64_t seed = -1;
  int jobs = 1;
};

std::vector<FramedCase> load_framed_cases(const std::string& data, const PipelineConfig& cfg,
                                          StructureId id, int jobs) {
  const std::vector<fs::path> dirs = list_cases(data);
  if (dirs.empty()) throw IoError("no cases (subdirectories with image.nrrd) under " + data);
  std::vector<FramedCase> cases(dirs.size());
  std::vector<std::string> errors(dirs.size());
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (size_t i = 0; i < dirs.size(); ++i) {
    try {
      const CaseData c = read_case(dirs[i]);
      const auto it = c.masks.find(id);
      cases[i] = frame_case(c.image, it == c.masks.end() ? nullptr : &it->second, cfg, id, c.id);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (size_t i = 0; i < dirs.size(); ++i)
    if (!errors[i].empty()) throw IoError(dirs[i].string() + ": " + errors[i]);
  return cases;
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  PipelineConfig cfg = resolve_config(a.config);
  const Stage stage = parse_stage(a.stage);
  const StructureId id = structure_of(a.structure);
  if (a.epochs >= 0) cfg.train.epochs = a.epochs;
  if (a.seed >= 0) cfg.train.seed = static_cast<uint64_t>(a.seed);
  cfg.validate();
  const auto cases = load_framed_cases(a.data, cfg, id, a.jobs);
  TrainResult r = train_stage(stage, cases, cfg, id, cfg.train);

  ModelFile mf;
  mf.structure = id;
  mf.stage = std::string(stage_name(stage));
  mf.config = cfg;
  mf.model = std::move(r.model);
  save_model(mf, a.out);
  if (!a.loss_trace.empty()) {
    std::ofstream lt(a.loss_trace);
    if (!lt) throw IoError("cannot write " + a.loss_trace);
    lt << std::setprecision(17);
    for (double l : r.loss_trace) lt << l << "\n";
  }
  out << "trained " << stage_name(stage) << " " << structure_name(id) << " on " << r.used_cases
      << " cases, " << cfg.train.epochs << " epochs";
  if (!r.loss_trace.empty()) out << ", final loss " << r.loss_trace.back();
  out << "\n";
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  std::string structure, locnet, segnet, image, data, out, frame = "iso";
  int jobs = 1;
};

void cmd_infer(const InferArgs& a, std::ostream& out) {
  const StructureId id = structure_of(a.structure);
  PipelineModel model = load_pipeline(a.locnet, a.segnet);
  if (model.structure != id)
    throw ConfigError("--structure: models were trained for " +
                      std::string(structure_name(model.structure)));
  const bool raw = a.frame == "raw";
  if (!a.image.empty()) {
    const Volume img = read_image(a.image);
    const InferResult r = infer_structure(img, model);
    write_mask(raw ? r.mask_raw : r.mask_iso, a.out);
    out << "box " << box_line(r.box) << " crop " << box_line(r.crop) << "\n";
    return;
  }
  const std::vector<fs::path> dirs = list_cases(a.data);
  std::vector<std::string> lines(dirs.size()), errors(dirs.size());
  const std::string file = std::string(structure_name(id)) + ".nrrd";
#pragma omp parallel for schedule(dynamic) num_threads(a.jobs)
  for (size_t i = 0; i < dirs.size(); ++i) {
    try {
      PipelineModel local = model;  // forward passes keep per-model caches
      const Volume img = read_image(dirs[i] / "image.nrrd");
      const InferResult r = infer_structure(img, local);
      const fs::path od = fs::path(a.out) / dirs[i].filename();
      fs::create_directories(od);
      write_mask(raw ? r.mask_raw : r.mask_iso, od / file);
      lines[i] = dirs[i].filename().string() + " box " + box_line(r.box);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (size_t i = 0; i < dirs.size(); ++i)
    if (!errors[i].empty()) throw IoError(dirs[i].string() + ": " + errors[i]);
  for (const auto& l : lines) out << l << "\n";
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string pred, gt, report, summary, case_id, structure, frame = "iso", config;
};

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  if (!std::isfinite(m)) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void print_summary(const std::string& path, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path);
  std::map<std::string, std::array<std::vector<double>, 4>> by;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const MetricsReport r = parse_report_line(line);
    auto& v = by[r.structure];
    v[0].push_back(r.dsc);
    v[1].push_back(r.hd95);
    v[2].push_back(r.ppv);
    v[3].push_back(r.sen);
  }
  out << std::fixed << std::setprecision(3);
  for (const auto& [name, v] : by) {
    out << name << " n=" << v[0].size();
    const char* labels[] = {"DSC", "95HD(mm)", "PPV", "SEN"};
    for (int k = 0; k < 4; ++k) out << " " << labels[k] << " " << mean_of(v[k]) << " ± " << sd_of(v[k]);
    out << "\n";
  }
}

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.pred.empty() != a.gt.empty()) throw ConfigError("--pred and --gt must be given together");
  if (a.pred.empty() && a.summary.empty())
    throw ConfigError("--pred/--gt or --summary is required");
  if (!a.pred.empty()) {
    if (a.report.empty()) throw ConfigError("--report is required with --pred/--gt");
    const Mask pred = read_mask(a.pred);
    Mask gt = read_mask(a.gt);
    if (a.frame == "iso" && pred.dims() != gt.dims()) {
      // Ground truth on the raw grid: bring it into the prediction's cropped frame.
      if (a.structure.empty())
        throw ConfigError("--structure is required to frame a raw ground truth");
      const PipelineConfig cfg = resolve_config(a.config);
      const Volume dummy(gt.dims(), gt.spacing());
      gt = frame_case(dummy, &gt, cfg, structure_of(a.structure)).gt;
    }
    if (pred.dims() != gt.dims())
      throw DimsError("--pred and --gt grids differ (" + dims_str(pred.dims()) + " vs " +
                      dims_str(gt.dims()) + ")");
    if (!(pred.spacing() == gt.spacing())) throw DimsError("--pred and --gt spacings differ");
    MetricsReport r = evaluate(pred, gt, a.case_id.empty() ? fs::path(a.pred).stem().string() : a.case_id,
                               a.structure);
    r.frame = a.frame;
    const std::string rec = report_to_json_line(r);
    std::ofstream rep(a.report, std::ios::app);
    if (!rep) throw IoError("cannot write report " + a.report);
    rep << rec << "\n";
    out << rec << "\n";
  }
  if (!a.summary.empty()) print_summary(a.summary, out);
}

// ---- locate ----------------------------------------------------------------

struct LocateArgs {
  std::string prob;
  std::vector<int64_t> box;
  double threshold = 0.5;
};

void cmd_locate(const LocateArgs& a, std::ostream& out) {
  const Dims size = to_dims(a.box, "--box");
  const Volume v = read_image(a.prob);
  Mask m(v.dims(), v.spacing());
  for (int64_t i = 0; i < v.size(); ++i) m[i] = v[i] > a.threshold;
  out << box_line(locate_box(m, size)) << "\n";
}

// ---- gradcheck -------------------------------------------------------------

bool cmd_gradcheck(uint64_t seed, std::ostream& out) {
  nn::GradCheckOptions opts;
  opts.seed = seed;
  const auto results = nn::run_gradcheck_suite(opts);
  double worst = 0;
  bool ok = true;
  out << std::scientific << std::setprecision(3);
  for (const auto& r : results) {
    const double tol = r.linear ? 1e-7 : 1e-3;
    const bool pass = r.max_rel_error <= tol;
    ok = ok && pass;
    worst = std::max(worst, r.max_rel_error);
    out << (pass ? "ok   " : "FAIL ") << std::left << std::setw(16) << r.name
        << " max_rel_error " << r.max_rel_error << " (tol " << tol << ") checked " << r.checked
        << " excluded " << r.excluded << "\n";
  }
  out << "max relative error " << worst << "\n";
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage 3D U-Net organ-at-risk segmentation: phantoms, preprocessing, "
               "training, inference and evaluation."};
  app.name("oarseg");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress warnings on stderr");
  const std::string cfg_help = std::string("Pipeline config (JSON, comments allowed); default $") +
                               kConfigEnv + " or built-in defaults";

  PhantomArgs pa;
  auto* ph = app.add_subcommand("phantom", "Write synthetic ellipsoid cases");
  ph->add_option("--out", pa.out, "Output directory (one case_NNN subdirectory per case)")->required();
  ph->add_option("--cases", pa.cases, "Number of cases")->check(CLI::PositiveNumber)->capture_default_str();
  ph->add_option("--seed", pa.seed, "Phantom seed")->capture_default_str();
  ph->add_option("--first-index", pa.first, "Index of the first case (also its case seed)")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  ph->add_option("--size", pa.size, "Frame dims X,Y,Z at 1 mm")->delimiter(',')->expected(3)
      ->capture_default_str();

  PreprocessArgs pp;
  auto* pr = app.add_subcommand("preprocess", "Resample, crop and normalize one case");
  pr->add_option("--in", pp.in, "Case directory")->required()->check(CLI::ExistingDirectory);
  pr->add_option("--out", pp.out, "Output directory")->required();
  pr->add_option("--structure", pp.structure, "Structure whose crop group to use")->required()
      ->check(structure_validator());
  pr->add_option("--config", pp.config, cfg_help)->check(CLI::ExistingFile);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a LocNet or SegNet for one structure");
  tr->add_option("--stage", ta.stage, "loc or seg")->required()->check(CLI::IsMember({"loc", "seg"}));
  tr->add_option("--structure", ta.structure, "Target structure")->required()->check(structure_validator());
  tr->add_option("--data", ta.data, "Directory of raw cases")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", ta.out, "Model file to write")->required();
  tr->add_option("--epochs", ta.epochs, "Passes over the training cases (default: config, 200)")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", ta.seed, "Initialization and shuffling seed (default: config, 0)")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--config", ta.config, cfg_help)->check(CLI::ExistingFile);
  tr->add_option("--jobs", ta.jobs, "Cases loaded in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--loss-trace", ta.loss_trace, "Write the per-step loss, one value per line");

  InferArgs ia;
  auto* in = app.add_subcommand("infer", "Locate and segment one structure");
  in->add_option("--structure", ia.structure, "Target structure")->required()->check(structure_validator());
  in->add_option("--locnet", ia.locnet, "LocNet model file")->required()->check(CLI::ExistingFile);
  in->add_option("--segnet", ia.segnet, "SegNet model file")->required()->check(CLI::ExistingFile);
  auto* img = in->add_option("--image", ia.image, "Raw CT volume (NRRD)")->check(CLI::ExistingFile);
  auto* dat = in->add_option("--data", ia.data, "Directory of cases; masks go to OUT/<case>/<Structure>.nrrd")
                  ->check(CLI::ExistingDirectory);
  img->excludes(dat);
  in->add_option("--out", ia.out, "Mask file (with --image) or directory (with --data)")->required();
  in->add_option("--frame", ia.frame, "iso: cropped isotropic frame; raw: input grid")
      ->check(CLI::IsMember({"iso", "raw"}))->capture_default_str();
  in->add_option("--jobs", ia.jobs, "Cases processed in parallel (with --data)")
      ->check(CLI::PositiveNumber)->capture_default_str();

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "DSC / 95HD / PPV / SEN of a predicted mask");
  ev->add_option("--pred", ea.pred, "Predicted mask")->check(CLI::ExistingFile);
  ev->add_option("--gt", ea.gt, "Ground-truth mask")->check(CLI::ExistingFile);
  ev->add_option("--report", ea.report, "Report file; one JSON record is appended per run");
  ev->add_option("--summary", ea.summary, "Print mean ± SD per structure from this report file");
  ev->add_option("--case", ea.case_id, "Case id recorded in the report (default: pred file stem)");
  ev->add_option("--structure", ea.structure, "Structure recorded in the report")->check(structure_validator());
  ev->add_option("--frame", ea.frame, "iso: raw ground truth is framed to match; raw: grids must match")
      ->check(CLI::IsMember({"iso", "raw"}))->capture_default_str();
  ev->add_option("--config", ea.config, cfg_help)->check(CLI::ExistingFile);

  LocateArgs la;
  auto* lo = app.add_subcommand("locate", "Sliding-cuboid search on a probability volume");
  lo->add_option("--prob", la.prob, "Probability or binary volume (NRRD)")->required()->check(CLI::ExistingFile);
  lo->add_option("--box", la.box, "Box size H,W,K in voxels")->required()->delimiter(',')->expected(3);
  lo->add_option("--threshold", la.threshold, "Foreground when value > threshold")->capture_default_str();

  uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Central-difference gradient checks of every layer");
  gc->add_option("--seed", gc_seed, "Sampling seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << e.get_name() << ": " << msg << "\n";
    return 2;
  }

  quiet_logging() = quiet;
  try {
    if (*ph) cmd_phantom(pa, out);
    if (*pr) cmd_preprocess(pp, out);
    if (*tr) cmd_train(ta, out);
    if (*in) {
      if (ia.image.empty() == ia.data.empty()) throw ConfigError("infer: exactly one of --image or --data is required");
      cmd_infer(ia, out);
    }
    if (*ev) cmd_evaluate(ea, out);
    if (*lo) cmd_locate(la, out);
    if (*gc && !cmd_gradcheck(gc_seed, out)) {
      err << "error: GradCheck: a layer exceeded its tolerance\n";
      return 1;
    }
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: Exception: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace oarseg
