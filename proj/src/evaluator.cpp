#include "bsm/evaluator.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bsm/chart.hpp"
#include "bsm/rng.hpp"

namespace fs = std::filesystem;

namespace bsm {

ConfusionCounts confusion_counts(const BoolGrid& pred, const BoolGrid& gt,
                                 const BoolGrid& valid) {
  if (pred.h != gt.h || pred.w != gt.w || pred.h != valid.h || pred.w != valid.w)
    throw std::invalid_argument("confusion_counts: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (!valid.v[i]) continue;
    const bool p = pred.v[i], g = gt.v[i];
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double iou(const ConfusionCounts& c) {
  const std::uint64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // neither prediction nor truth contains building
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

EvalReport aggregate(const std::vector<ImageScore>& images,
                     const std::string& config_hash, double timing_s) {
  if (images.empty()) throw std::invalid_argument("aggregate: no images");
  EvalReport r;
  r.images = images;
  r.config_hash = config_hash;
  r.timing_s = timing_s;

  double iou_sum = 0.0;
  for (const ImageScore& s : images) iou_sum += s.iou_percent;
  r.miou_image_mean = iou_sum / static_cast<double>(images.size());

  // cities in first-appearance order, IoU from pooled counts
  for (const ImageScore& s : images) {
    CityScore* city = nullptr;
    for (CityScore& c : r.cities)
      if (c.city == s.city) city = &c;
    if (!city) {
      r.cities.push_back(CityScore{s.city, {}, 0, 0.0});
      city = &r.cities.back();
    }
    city->counts += s.counts;
    ++city->images;
  }
  double city_sum = 0.0;
  for (CityScore& c : r.cities) {
    c.iou_percent = 100.0 * iou(c.counts);
    city_sum += c.iou_percent;
  }
  r.miou_city_mean = city_sum / static_cast<double>(r.cities.size());
  return r;
}

EvalReport evaluate_model(const SegNet& model, const std::vector<Tile>& tiles,
                          const std::string& config_hash) {
  if (tiles.empty()) throw std::invalid_argument("evaluate_model: no tiles");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ImageScore> scores;
  scores.reserve(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    // test-time convention: batch size 1
    SampleBatch b = make_batch(tiles, {static_cast<int>(i)});
    const Tensor logits = model.forward_infer(b.images);
    BoolGrid pred(logits.h, logits.w);
    for (int y = 0; y < logits.h; ++y) {
      for (int x = 0; x < logits.w; ++x) {
        int best = 0;
        double bv = logits.at(0, 0, y, x);
        for (int c = 1; c < logits.c; ++c) {
          if (logits.at(0, c, y, x) > bv) {
            bv = logits.at(0, c, y, x);
            best = c;
          }
        }
        pred.at(y, x) = best == 1 ? 1 : 0;
      }
    }
    ImageScore s;
    s.id = tiles[i].id;
    s.city = tiles[i].city;
    s.counts = confusion_counts(pred, tiles[i].mask, tiles[i].valid);
    s.iou_percent = 100.0 * iou(s.counts);
    scores.push_back(std::move(s));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return aggregate(scores, config_hash, secs);
}

namespace {

std::string fmt17(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// key<TAB>value store with ordered emission; parse side keeps a map.
class KvReader {
 public:
  explicit KvReader(const std::string& path) : path_(path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open report: " + path);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("report " + path + ": malformed line '" + line + "'");
      kv_[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end())
      throw std::runtime_error("report " + path_ + ": missing key " + key);
    return it->second;
  }
  double get_d(const std::string& key) const { return std::stod(get(key)); }
  long get_l(const std::string& key) const { return std::stol(get(key)); }
  std::uint64_t get_u(const std::string& key) const { return std::stoull(get(key)); }

 private:
  std::string path_;
  std::map<std::string, std::string> kv_;
};

void write_counts(std::ofstream& f, const std::string& prefix,
                  const ConfusionCounts& c) {
  f << prefix << ".tp\t" << c.tp << '\n';
  f << prefix << ".fp\t" << c.fp << '\n';
  f << prefix << ".fn\t" << c.fn << '\n';
  f << prefix << ".tn\t" << c.tn << '\n';
}

ConfusionCounts read_counts(const KvReader& kv, const std::string& prefix) {
  ConfusionCounts c;
  c.tp = kv.get_u(prefix + ".tp");
  c.fp = kv.get_u(prefix + ".fp");
  c.fn = kv.get_u(prefix + ".fn");
  c.tn = kv.get_u(prefix + ".tn");
  return c;
}

}  // namespace

void emit_report(const EvalReport& report, const std::string& out_prefix) {
  const std::string tsv = out_prefix + ".tsv";
  std::ofstream f(tsv);
  if (!f) throw std::runtime_error("cannot write report: " + tsv);
  f << "schema\tbsm-eval-report/1\n";
  f << "config_hash\t" << report.config_hash << '\n';
  f << "timing_s\t" << fmt17(report.timing_s) << '\n';
  f << "miou_image_mean\t" << fmt17(report.miou_image_mean) << '\n';
  f << "miou_city_mean\t" << fmt17(report.miou_city_mean) << '\n';
  f << "n_cities\t" << report.cities.size() << '\n';
  for (std::size_t i = 0; i < report.cities.size(); ++i) {
    const CityScore& c = report.cities[i];
    const std::string p = "city." + std::to_string(i);
    f << p << ".name\t" << c.city << '\n';
    f << p << ".iou\t" << fmt17(c.iou_percent) << '\n';
    f << p << ".images\t" << c.images << '\n';
    write_counts(f, p, c.counts);
  }
  f << "n_images\t" << report.images.size() << '\n';
  for (std::size_t i = 0; i < report.images.size(); ++i) {
    const ImageScore& s = report.images[i];
    const std::string p = "image." + std::to_string(i);
    f << p << ".id\t" << s.id << '\n';
    f << p << ".city\t" << s.city << '\n';
    f << p << ".iou\t" << fmt17(s.iou_percent) << '\n';
    write_counts(f, p, s.counts);
  }

  // human-readable table, percentages to two decimals
  std::ofstream t(out_prefix + "_table.txt");
  if (!t) throw std::runtime_error("cannot write report table");
  t << "city                 IoU (%)   images\n";
  for (const CityScore& c : report.cities)
    t << std::left << std::setw(20) << c.city << ' ' << std::right << std::setw(7)
      << fmt2(c.iou_percent) << ' ' << std::setw(8) << c.images << '\n';
  t << '\n';
  t << "mIoU (image mean)    " << fmt2(report.miou_image_mean) << '\n';
  t << "mIoU (city mean)     " << fmt2(report.miou_city_mean) << '\n';
  t << "images               " << report.images.size() << '\n';
  t << "eval time (s)        " << fmt2(report.timing_s) << '\n';

  std::vector<std::pair<std::string, double>> bars;
  for (const CityScore& c : report.cities) bars.emplace_back(c.city, c.iou_percent);
  render_bar_chart(bars, "per-city IoU (%)", out_prefix + "_chart.png");
}

EvalReport parse_report(const std::string& tsv_path) {
  KvReader kv(tsv_path);
  if (kv.get("schema") != "bsm-eval-report/1")
    throw std::runtime_error("report " + tsv_path + ": unknown schema");
  EvalReport r;
  r.config_hash = kv.get("config_hash");
  r.timing_s = kv.get_d("timing_s");
  r.miou_image_mean = kv.get_d("miou_image_mean");
  r.miou_city_mean = kv.get_d("miou_city_mean");
  const long n_cities = kv.get_l("n_cities");
  for (long i = 0; i < n_cities; ++i) {
    const std::string p = "city." + std::to_string(i);
    CityScore c;
    c.city = kv.get(p + ".name");
    c.iou_percent = kv.get_d(p + ".iou");
    c.images = kv.get_l(p + ".images");
    c.counts = read_counts(kv, p);
    r.cities.push_back(std::move(c));
  }
  const long n_images = kv.get_l("n_images");
  for (long i = 0; i < n_images; ++i) {
    const std::string p = "image." + std::to_string(i);
    ImageScore s;
    s.id = kv.get(p + ".id");
    s.city = kv.get(p + ".city");
    s.iou_percent = kv.get_d(p + ".iou");
    s.counts = read_counts(kv, p);
    r.images.push_back(std::move(s));
  }
  return r;
}

namespace {

std::string enabled_to_string(const std::set<Submodule>& enabled) {
  if (enabled.empty()) return "-";
  std::string s;
  for (Submodule m : {Submodule::GA, Submodule::CA, Submodule::SM}) {
    if (!enabled.count(m)) continue;
    if (!s.empty()) s += "+";
    s += submodule_name(m);
  }
  return s;
}

std::set<Submodule> enabled_from_string(const std::string& s) {
  std::set<Submodule> out;
  if (s == "-") return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t plus = s.find('+', start);
    const std::string tok =
        s.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    if (!tok.empty()) out.insert(submodule_from_name(tok));
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return out;
}

}  // namespace

AblationTable run_ablation(const std::vector<Tile>& train_tiles,
                           const std::vector<Tile>& eval_tiles,
                           const SegModelConfig& model_cfg, const BsmConfig& bsm_base,
                           const TrainConfig& train_cfg, const std::string& out_dir,
                           const std::string& config_hash) {
  using SM = Submodule;
  const std::vector<std::pair<std::string, std::set<SM>>> combos = {
      {"baseline", {}},
      {"GA", {SM::GA}},
      {"CA", {SM::CA}},
      {"SM", {SM::SM}},
      {"GA+CA", {SM::GA, SM::CA}},
      {"GA+SM", {SM::GA, SM::SM}},
      {"CA+SM", {SM::CA, SM::SM}},
      {"GA+CA+SM", {SM::GA, SM::CA, SM::SM}},
  };

  AblationTable table;
  const std::uint64_t model_seed = derive_seed(train_cfg.seed, 0x5EEDuLL);
  for (const auto& [name, enabled] : combos) {
    AblationRow row;
    row.name = name;
    row.enabled = enabled;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      BsmConfig cfg = bsm_base;
      cfg.enabled = enabled;
      SegNet model(model_cfg, model_seed);  // same init for every row
      const std::string row_dir = (fs::path(out_dir) / ("row_" + name)).string();
      TrainResult tr =
          train(model, train_tiles, cfg, train_cfg, row_dir, config_hash, false);
      if (tr.aborted) throw std::runtime_error(tr.abort_reason);
      row.data_order_hash = tr.data_order_hash;
      EvalReport rep = evaluate_model(model, eval_tiles, config_hash);
      emit_report(rep, (fs::path(row_dir) / "eval_report").string());
      row.miou_image_mean = rep.miou_image_mean;
      row.miou_city_mean = rep.miou_city_mean;
      for (const CityScore& c : rep.cities)
        row.city_iou.emplace_back(c.city, c.iou_percent);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    row.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    table.rows.push_back(std::move(row));
  }
  return table;
}

void emit_ablation(const AblationTable& table, const std::string& out_prefix) {
  const std::string tsv = out_prefix + ".tsv";
  std::ofstream f(tsv);
  if (!f) throw std::runtime_error("cannot write ablation table: " + tsv);
  f << "schema\tbsm-ablation/1\n";
  f << "n_rows\t" << table.rows.size() << '\n';
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const AblationRow& r = table.rows[i];
    const std::string p = "row." + std::to_string(i);
    f << p << ".name\t" << r.name << '\n';
    f << p << ".enabled\t" << enabled_to_string(r.enabled) << '\n';
    f << p << ".failed\t" << (r.failed ? 1 : 0) << '\n';
    if (r.failed) f << p << ".error\t" << r.error << '\n';
    f << p << ".miou_image_mean\t" << fmt17(r.miou_image_mean) << '\n';
    f << p << ".miou_city_mean\t" << fmt17(r.miou_city_mean) << '\n';
    f << p << ".wall_s\t" << fmt17(r.wall_s) << '\n';
    f << p << ".data_order_hash\t" << r.data_order_hash << '\n';
    f << p << ".n_cities\t" << r.city_iou.size() << '\n';
    for (std::size_t j = 0; j < r.city_iou.size(); ++j) {
      f << p << ".city." << j << ".name\t" << r.city_iou[j].first << '\n';
      f << p << ".city." << j << ".iou\t" << fmt17(r.city_iou[j].second) << '\n';
    }
  }

  std::ofstream t(out_prefix + "_table.txt");
  if (!t) throw std::runtime_error("cannot write ablation table");
  t << "submodules           mIoU (%)";
  if (!table.rows.empty())
    for (const auto& [city, unused] : table.rows.front().city_iou)
      t << "  " << std::setw(10) << city;
  t << "   time (s)\n";
  for (const AblationRow& r : table.rows) {
    t << std::left << std::setw(20) << r.name << ' ';
    if (r.failed) {
      t << "FAILED: " << r.error << '\n';
      continue;
    }
    t << std::right << std::setw(8) << fmt2(r.miou_image_mean);
    for (const auto& [city, v] : r.city_iou) t << "  " << std::setw(10) << fmt2(v);
    t << "   " << std::setw(8) << fmt2(r.wall_s) << '\n';
  }

  std::vector<std::pair<std::string, double>> bars;
  for (const AblationRow& r : table.rows)
    bars.emplace_back(r.name, r.failed ? 0.0 : r.miou_image_mean);
  render_bar_chart(bars, "mIoU (%) per submodule combination", out_prefix + "_chart.png");
}

AblationTable parse_ablation(const std::string& tsv_path) {
  KvReader kv(tsv_path);
  if (kv.get("schema") != "bsm-ablation/1")
    throw std::runtime_error("ablation " + tsv_path + ": unknown schema");
  AblationTable table;
  const long n_rows = kv.get_l("n_rows");
  for (long i = 0; i < n_rows; ++i) {
    const std::string p = "row." + std::to_string(i);
    AblationRow r;
    r.name = kv.get(p + ".name");
    r.enabled = enabled_from_string(kv.get(p + ".enabled"));
    r.failed = kv.get_l(p + ".failed") != 0;
    if (r.failed) r.error = kv.get(p + ".error");
    r.miou_image_mean = kv.get_d(p + ".miou_image_mean");
    r.miou_city_mean = kv.get_d(p + ".miou_city_mean");
    r.wall_s = kv.get_d(p + ".wall_s");
    r.data_order_hash = kv.get(p + ".data_order_hash");
    const long n_cities = kv.get_l(p + ".n_cities");
    for (long j = 0; j < n_cities; ++j) {
      const std::string q = p + ".city." + std::to_string(j);
      r.city_iou.emplace_back(kv.get(q + ".name"), kv.get_d(q + ".iou"));
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace bsm
