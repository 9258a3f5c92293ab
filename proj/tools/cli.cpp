#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tabrec/checkpoint.hpp"
#include "tabrec/inference.hpp"
#include "tabrec/synthgen.hpp"
#include "tabrec/teds.hpp"

namespace tabrec::cli {

using nlohmann::json;

unsigned workers_from_env() {
  const char* v = std::getenv("TABREC_WORKERS");
  if (!v || !*v) return 1;
  try {
    const int n = std::stoi(v);
    if (n < 1) throw std::invalid_argument(v);
    return static_cast<unsigned>(n);
  } catch (const std::exception&) {
    throw UsageError(std::string("TABREC_WORKERS must be a positive integer, got '") + v + "'");
  }
}

namespace {

json model_json(const net::ModelConfig& m) {
  return {{"image_side", m.image_side},   {"channels", m.channels},
          {"heads", m.heads},             {"ff_mult", m.ff_mult},
          {"html_blocks", m.html_blocks}, {"cell_blocks", m.cell_blocks},
          {"refiner_blocks", m.refiner_blocks}, {"window", m.window},
          {"structure_cap", m.structure_cap}, {"content_cap", m.content_cap},
          {"variant", net::to_string(m.variant)}};
}

json train_json(const train::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"batch", t.batch},
          {"clip", t.clip},
          {"weight_decay", t.weight_decay},
          {"weights",
           {{"structure", t.weights.structure},
            {"kl", t.weights.kl},
            {"content", t.weights.content},
            {"bbox", t.weights.bbox}}}};
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

void dump_config(const RunConfig& rc) {
  if (rc.out.empty()) return;
  std::filesystem::create_directories(rc.out);
  write_text(rc.out / "run_config.json", rc.dump());
}

void require_path(const std::filesystem::path& p, const std::string& flag) {
  if (p.empty()) throw UsageError(flag + " is required");
  if (!std::filesystem::exists(p)) throw DataError(flag + " " + p.string() + " does not exist");
}

void require_out(const RunConfig& rc) {
  if (rc.out.empty()) throw UsageError("--out is required");
}

std::vector<synth::TableRecord> load_records(const std::filesystem::path& dir) {
  try {
    return synth::load_corpus(dir);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e)
      pool.emplace_back([&f, b, e] {
        for (std::size_t i = b; i < e; ++i) f(i);
      });
  }
  for (auto& t : pool) t.join();
}

std::vector<teds::HtmlRecord> read_html_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<teds::HtmlRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("html").get<std::string>()});
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

json box_json(const std::vector<net::CellBox>& boxes) {
  json a = json::array();
  for (const auto& b : boxes) a.push_back({b.cx, b.cy, b.w, b.h});
  return a;
}

}  // namespace

std::string RunConfig::dump() const {
  json j{{"subcommand", subcommand},
         {"seed", seed},
         {"parallel", parallel},
         {"preset", preset},
         {"count", count},
         {"test_count", test_count},
         {"workers", workers},
         {"corpus", corpus.string()},
         {"out", out.string()},
         {"checkpoint", checkpoint.string()},
         {"pred", pred.string()},
         {"gt", gt.string()},
         {"model", model_json(model)},
         {"train", train_json(train)}};
  return j.dump(2) + "\n";
}

void RunConfig::apply_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw UsageError(std::string("config file: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") seed = v.get<std::uint64_t>();
      else if (key == "parallel") parallel = v.get<bool>();
      else if (key == "preset") preset = v.get<std::string>();
      else if (key == "count") count = v.get<std::size_t>();
      else if (key == "test_count") test_count = v.get<std::size_t>();
      else if (key == "corpus") corpus = v.get<std::string>();
      else if (key == "out") out = v.get<std::string>();
      else if (key == "checkpoint") checkpoint = v.get<std::string>();
      else if (key == "pred") pred = v.get<std::string>();
      else if (key == "gt") gt = v.get<std::string>();
      else if (key == "variant") model.variant = net::parse_variant(v.get<std::string>());
      else if (key == "model") {
        for (const auto& [mk, mv] : v.items()) model.set(mk, scalar_text(mv));
      } else if (key == "train") {
        for (const auto& [tk, tv] : v.items()) {
          if (tk == "epochs") train.epochs = tv.get<int>();
          else if (tk == "lr") train.lr = tv.get<double>();
          else if (tk == "batch") train.batch = tv.get<int>();
          else if (tk == "clip") train.clip = tv.get<double>();
          else if (tk == "weight_decay") train.weight_decay = tv.get<double>();
          else if (tk == "weights") {
            train.weights.structure = tv.value("structure", train.weights.structure);
            train.weights.kl = tv.value("kl", train.weights.kl);
            train.weights.content = tv.value("content", train.weights.content);
            train.weights.bbox = tv.value("bbox", train.weights.bbox);
          } else {
            throw UsageError("unknown train key '" + tk + "'");
          }
        }
      } else if (key == "subcommand" || key == "workers") {
        // Informational fields of a dumped config.
      } else {
        throw UsageError("unknown config key '" + key + "'");
      }
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("config file: ") + e.what());
  }
}

void cmd_gen(const RunConfig& rc, std::ostream& out) {
  require_out(rc);
  const synth::PresetSpec preset = synth::PresetSpec::named(rc.preset, rc.model.image_side);
  const auto records = synth::generate_corpus(preset, rc.count, rc.seed, rc.workers);
  synth::emit_corpus(records, preset, rc.seed, rc.out);
  std::ofstream gt(rc.out / "ground_truth.jsonl");
  for (const auto& r : records) gt << json{{"id", r.filename}, {"html", r.html()}}.dump() << '\n';
  dump_config(rc);
  out << "wrote " << records.size() << " tables to " << rc.out.string() << '\n';
}

void cmd_train(const RunConfig& rc, std::ostream& out) {
  require_path(rc.corpus, "--corpus");
  require_out(rc);
  const auto records = load_records(rc.corpus);
  std::filesystem::create_directories(rc.out);
  dump_config(rc);
  net::TableModel<float> model(rc.model, rc.seed);
  train::TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  tc.workers = rc.workers;
  tc.metrics_log = rc.out / "metrics.jsonl";
  try {
    train::train(model, records, tc, [&](const train::EpochReport& e) {
      out << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean.total << '\n';
    });
  } catch (const train::TrainingDiverged& e) {
    throw InvariantViolation(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  save_checkpoint(model, rc.out / "model.ckpt");
  out << "saved " << (rc.out / "model.ckpt").string() << '\n';
}

void cmd_infer(const RunConfig& rc, std::ostream& out) {
  require_path(rc.checkpoint, "--checkpoint");
  require_path(rc.corpus, "--corpus");
  require_out(rc);
  net::TableModel<float> model = [&] {
    try {
      return load_checkpoint<float>(rc.checkpoint);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  }();
  const auto records = load_records(rc.corpus);
  std::vector<infer::Recognition> results(records.size());
  parallel_for(records.size(), rc.workers,
               [&](std::size_t i) { results[i] = infer::recognize(model, records[i].image, rc.parallel); });
  dump_config(rc);
  std::ofstream f(rc.out / "predictions.jsonl");
  if (!f) throw DataError("cannot write predictions under " + rc.out.string());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = results[i];
    f << json{{"id", records[i].filename},
              {"html", r.html},
              {"boxes", box_json(r.boxes)},
              {"times", {{"html", r.times.html}, {"bbox", r.times.bbox}, {"cell", r.times.cell}}},
              {"passes", {{"html", r.html_passes}, {"cell", r.cell_passes}}},
              {"truncated", {{"structure", r.structure_truncated}, {"content", r.content_truncated}}}}
             .dump()
      << '\n';
  }
  out << "wrote " << records.size() << " predictions to " << (rc.out / "predictions.jsonl").string() << '\n';
}

void cmd_eval(const RunConfig& rc, std::ostream& out) {
  require_path(rc.pred, "--pred");
  require_path(rc.gt, "--gt");
  const auto pred = read_html_records(rc.pred);
  const auto gt = read_html_records(rc.gt);
  teds::EvalReport rep;
  try {
    rep = teds::evaluate(pred, gt, rc.workers);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const std::string text = teds::format_report(rep);
  out << text;
  if (!rc.out.empty()) {
    dump_config(rc);
    write_text(rc.out / "report.txt", text);
    std::ofstream f(rc.out / "eval.jsonl");
    for (const auto& s : rep.samples)
      f << json{{"id", s.id},
                {"class", s.table_class == teds::TableClass::kComplex ? "complex" : "simple"},
                {"structural", s.structural},
                {"total", s.total},
                {"parse_error", s.parse_error}}
               .dump()
        << '\n';
    auto agg = [](const teds::Aggregate& a) {
      return json{{"count", a.count}, {"structural", a.structural}, {"total", a.total}};
    };
    f << json{{"aggregate", {{"simple", agg(rep.simple)}, {"complex", agg(rep.complex)}, {"all", agg(rep.all)}}}}.dump()
      << '\n';
  }
}

BenchReport cmd_bench(const RunConfig& rc, std::ostream& out) {
  require_path(rc.checkpoint, "--checkpoint");
  net::TableModel<float> model = [&] {
    try {
      return load_checkpoint<float>(rc.checkpoint);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  }();
  std::vector<synth::TableRecord> records;
  if (!rc.corpus.empty()) {
    require_path(rc.corpus, "--corpus");
    records = load_records(rc.corpus);
    if (rc.count < records.size()) records.resize(rc.count);
  } else {
    records = synth::generate_corpus(synth::PresetSpec::named(rc.preset, model.config().image_side), rc.count, rc.seed,
                                     rc.workers);
  }
  if (records.empty()) throw DataError("bench needs at least one table");

  // Warm-up, excluded from the means.
  (void)infer::recognize(model, records.front().image, true);

  BenchReport rep;
  rep.samples = records.size();
  rep.sequential.parallel = false;
  rep.parallel.parallel = true;
  double seq_passes = 0, par_passes = 0, seq_cell = 0, par_cell = 0, cells = 0, chars = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const infer::Recognition s = infer::recognize(model, records[i].image, false);
    const infer::Recognition p = infer::recognize(model, records[i].image, true);
    if (s.cell_tokens != p.cell_tokens || s.html != p.html)
      throw InvariantViolation("parallel and sequential outputs differ on " + records[i].filename);
    if (!s.content_truncated && !p.content_truncated) {
      std::size_t longest = 0, sum = 0;
      for (const auto& c : p.cell_tokens) {
        longest = std::max(longest, c.size());
        sum += c.size() + 1;
      }
      const std::size_t expect_par = p.cell_tokens.empty() ? 0 : longest + 1;
      if (p.cell_passes != expect_par || s.cell_passes != sum)
        throw InvariantViolation("pass-count law violated on " + records[i].filename + ": parallel " +
                                 std::to_string(p.cell_passes) + " (expected " + std::to_string(expect_par) +
                                 "), sequential " + std::to_string(s.cell_passes) + " (expected " +
                                 std::to_string(sum) + ")");
    }
    for (auto [row, r] : {std::pair{&rep.sequential, &s}, std::pair{&rep.parallel, &p}}) {
      row->html += r->times.html;
      row->bbox += r->times.bbox;
      row->cell += r->times.cell;
      row->passes += static_cast<double>(r->cell_passes);
    }
    seq_passes += static_cast<double>(s.cell_passes);
    par_passes += static_cast<double>(p.cell_passes);
    seq_cell += s.times.cell - s.times.bbox;
    par_cell += p.times.cell - p.times.bbox;
    cells += static_cast<double>(p.cell_tokens.size());
    for (const auto& c : p.cell_tokens) chars += static_cast<double>(c.size());
  }
  const double n = static_cast<double>(records.size());
  for (BenchRow* row : {&rep.sequential, &rep.parallel}) {
    row->html /= n;
    row->bbox /= n;
    row->cell /= n;
    row->passes /= n;
  }
  rep.mean_cells = cells / n;
  rep.mean_length = cells > 0 ? chars / cells : 0.0;
  rep.pass_ratio = par_passes > 0 ? seq_passes / par_passes : 0.0;
  rep.cell_speedup = par_cell > 0 ? seq_cell / par_cell : 0.0;

  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "samples " << rep.samples << ", mean cells " << std::setprecision(2) << rep.mean_cells
     << ", mean decoded length " << rep.mean_length << '\n';
  os << std::setprecision(4);
  os << "Parallel        HTML      +Bbox      +Cell     passes\n";
  for (const BenchRow* row : {&rep.sequential, &rep.parallel})
    os << std::setw(8) << (row->parallel ? "on" : "-") << std::setw(11) << row->html << std::setw(11) << row->bbox
       << std::setw(11) << row->cell << std::setw(11) << std::setprecision(1) << row->passes << std::setprecision(4)
       << '\n';
  os << std::setprecision(2) << "cell-stage speedup " << rep.cell_speedup << "x, pass-count ratio " << rep.pass_ratio
     << "x\n";
  out << os.str();
  if (!rc.out.empty()) {
    dump_config(rc);
    auto row_json = [](const BenchRow& r) {
      return json{{"html", r.html}, {"bbox", r.bbox}, {"cell", r.cell}, {"passes", r.passes}};
    };
    write_text(rc.out / "bench.json", json{{"samples", rep.samples},
                                           {"mean_cells", rep.mean_cells},
                                           {"mean_length", rep.mean_length},
                                           {"sequential", row_json(rep.sequential)},
                                           {"parallel", row_json(rep.parallel)},
                                           {"pass_ratio", rep.pass_ratio},
                                           {"cell_speedup", rep.cell_speedup}}
                                          .dump(2) +
                                          "\n");
  }
  return rep;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& rc, std::ostream& out) {
  std::vector<AblationRow> rows;
  const std::vector<std::string> presets = {"wide", "dense"};
  const std::vector<net::Variant> variants = {net::Variant::kBbox, net::Variant::kThrough, net::Variant::kFull};
  for (const auto& preset_name : presets) {
    const auto preset = synth::PresetSpec::named(preset_name, rc.model.image_side);
    const auto train_set = synth::generate_corpus(preset, rc.count, rc.seed, rc.workers);
    const auto test_set = synth::generate_corpus(preset, rc.test_count, ~rc.seed, rc.workers);
    std::vector<teds::HtmlRecord> truth;
    for (const auto& r : test_set) truth.push_back({r.filename, r.html()});
    for (net::Variant v : variants) {
      net::ModelConfig mc = rc.model;
      mc.variant = v;
      net::TableModel<float> model(mc, rc.seed);
      train::TrainConfig tc = rc.train;
      tc.seed = rc.seed;
      tc.workers = rc.workers;
      tc.metrics_log.clear();
      try {
        train::train(model, train_set, tc);
      } catch (const train::TrainingDiverged& e) {
        throw InvariantViolation(e.what());
      }
      std::vector<teds::HtmlRecord> pred(test_set.size());
      parallel_for(test_set.size(), rc.workers, [&](std::size_t i) {
        pred[i] = {test_set[i].filename, infer::recognize(model, test_set[i].image, true).html};
      });
      const teds::EvalReport rep = teds::evaluate(pred, truth, rc.workers);
      rows.push_back({net::to_string(v), preset_name, rep.all.structural, rep.all.total});
    }
  }

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "Total TEDS (%)   " << std::setw(10) << "wide" << std::setw(10) << "dense" << '\n';
  for (net::Variant v : variants) {
    os << std::left << std::setw(17) << net::to_string(v) << std::right;
    for (const auto& p : presets)
      for (const auto& r : rows)
        if (r.variant == net::to_string(v) && r.preset == p) os << std::setw(10) << 100.0 * r.total;
    os << '\n';
  }
  auto find = [&](const std::string& v, const std::string& p) {
    for (const auto& r : rows)
      if (r.variant == v && r.preset == p) return r.total;
    return 0.0;
  };
  os << "full - bbox on wide: " << std::showpos << 100.0 * (find("full", "wide") - find("bbox", "wide"))
     << std::noshowpos << " points\n";
  out << os.str();

  if (!rc.out.empty()) {
    dump_config(rc);
    json a = json::array();
    for (const auto& r : rows)
      a.push_back({{"variant", r.variant}, {"preset", r.preset}, {"structural", r.structural}, {"total", r.total}});
    write_text(rc.out / "ablation.json", a.dump(2) + "\n");
    write_text(rc.out / "report.txt", os.str());
  }
  return rows;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  CLI::App app{"Table recognition: synthetic corpora, training, inference, evaluation"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, variant, parallel, preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count, test_count;
  std::optional<int> epochs, batch;
  std::optional<double> lr;
  std::optional<std::string> corpus, outdir, checkpoint, pred, gt;
  std::vector<std::string> sets;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--out", outdir, "Output directory");
  };
  auto model_opts = [&](CLI::App* sub) {
    sub->add_option("--variant", variant, "Cell decoder conditioning")->check(CLI::IsMember({"full", "bbox", "through"}));
    sub->add_option("--set", sets, "Model override key=value (repeatable)");
  };
  auto train_opts = [&](CLI::App* sub) {
    sub->add_option("--epochs", epochs, "Training epochs");
    sub->add_option("--lr", lr, "Base learning rate");
    sub->add_option("--batch", batch, "Tables per optimizer step");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  common(gen);
  gen->add_option("--preset", preset, "Corpus preset")->check(CLI::IsMember({"wide", "dense"}));
  gen->add_option("--count", count, "Number of tables");
  gen->add_option("--set", sets, "Model override key=value (image_side sets the raster size)");

  CLI::App* trn = app.add_subcommand("train", "Train a model on a corpus");
  common(trn);
  model_opts(trn);
  train_opts(trn);
  trn->add_option("--corpus", corpus, "Corpus directory");

  CLI::App* inf = app.add_subcommand("infer", "Recognize every table of a corpus");
  common(inf);
  inf->add_option("--checkpoint", checkpoint, "Model checkpoint");
  inf->add_option("--corpus", corpus, "Corpus directory");
  inf->add_option("--parallel", parallel, "Parallel cell decoding")->check(CLI::IsMember({"on", "off"}));

  CLI::App* evl = app.add_subcommand("eval", "Score predictions against ground truth");
  common(evl);
  evl->add_option("--pred", pred, "Predictions (JSONL with id and html)");
  evl->add_option("--gt", gt, "Ground truth (JSONL with id and html)");

  CLI::App* bch = app.add_subcommand("bench", "Time recognition with parallel decoding on and off");
  common(bch);
  bch->add_option("--checkpoint", checkpoint, "Model checkpoint");
  bch->add_option("--corpus", corpus, "Corpus directory (otherwise generated from --preset)");
  bch->add_option("--preset", preset, "Corpus preset")->check(CLI::IsMember({"wide", "dense"}));
  bch->add_option("--count", count, "Number of tables");

  CLI::App* abl = app.add_subcommand("ablate", "Variant x preset ablation grid");
  common(abl);
  model_opts(abl);
  train_opts(abl);
  abl->add_option("--count", count, "Training tables per preset");
  abl->add_option("--test-count", test_count, "Held-out tables per preset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    rc.subcommand = app.get_subcommands().front()->get_name();
    if (config_path) {
      std::ifstream f(*config_path);
      if (!f) throw UsageError("cannot read config file " + *config_path);
      std::stringstream ss;
      ss << f.rdbuf();
      rc.apply_json(ss.str());
    }
    rc.workers = workers_from_env();
    if (seed) rc.seed = *seed;
    if (preset) rc.preset = *preset;
    if (count) rc.count = *count;
    if (test_count) rc.test_count = *test_count;
    if (parallel) rc.parallel = *parallel == "on";
    if (epochs) rc.train.epochs = *epochs;
    if (lr) rc.train.lr = *lr;
    if (batch) rc.train.batch = *batch;
    if (corpus) rc.corpus = *corpus;
    if (outdir) rc.out = *outdir;
    if (checkpoint) rc.checkpoint = *checkpoint;
    if (pred) rc.pred = *pred;
    if (gt) rc.gt = *gt;
    try {
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        rc.model.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (variant) rc.model.variant = net::parse_variant(*variant);
      rc.model.validate();
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    if (rc.train.epochs < 0 || rc.train.batch < 1 || !(rc.train.lr >= 0))
      throw UsageError("epochs >= 0, batch >= 1 and lr >= 0 required");

    if (rc.subcommand == "gen") cmd_gen(rc, out);
    else if (rc.subcommand == "train") cmd_train(rc, out);
    else if (rc.subcommand == "infer") cmd_infer(rc, out);
    else if (rc.subcommand == "eval") cmd_eval(rc, out);
    else if (rc.subcommand == "bench") cmd_bench(rc, out);
    else if (rc.subcommand == "ablate") cmd_ablate(rc, out);
    return kOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvariantViolation& e) {
    err << "invariant violation: " << e.what() << '\n';
    return kInvariant;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace tabrec::cli
