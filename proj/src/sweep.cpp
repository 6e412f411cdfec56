#include "wsds/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "wsds/errors.hpp"
#include "wsds/metrics.hpp"
#include "wsds/trainer.hpp"

namespace wsds {

using nlohmann::json;

double median_of(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

SweepRow median_row(const std::vector<SweepRow>& per_seed) {
  SweepRow m = per_seed.front();
  m.seed.reset();
  std::vector<double> d, i, f;
  for (const SweepRow& r : per_seed) {
    d.push_back(r.mdice);
    i.push_back(r.miou);
    f.push_back(r.false_positive_rate);
  }
  m.mdice = median_of(d);
  m.miou = median_of(i);
  m.false_positive_rate = median_of(f);
  return m;
}

void fill_scores(SweepRow& row, const EvalReport& report) {
  row.mdice = report.mdice;
  row.miou = report.miou;
  row.false_positive_rate = report.mean_false_positive_rate;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SweepResult::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "study,alpha,beta1,beta2,seed,mdice,miou,false_positive_rate,is_default\n";
  for (const SweepRow& r : rows) {
    out << r.study << ',' << fmt(r.alpha) << ',' << (r.beta1 ? fmt(*r.beta1) : "") << ','
        << (r.beta2 ? fmt(*r.beta2) : "") << ','
        << (r.seed ? std::to_string(*r.seed) : std::string("median")) << ',' << fmt(r.mdice)
        << ',' << fmt(r.miou) << ',' << fmt(r.false_positive_rate) << ','
        << (r.is_default ? 1 : 0) << '\n';
  }
}

const SweepRow* SweepResult::median(const std::string& study, double alpha,
                                    std::optional<std::pair<double, double>> betas) const {
  for (const SweepRow& r : rows) {
    if (r.seed || r.study != study || r.alpha != alpha) continue;
    if (betas && (r.beta1 != betas->first || r.beta2 != betas->second)) continue;
    return &r;
  }
  return nullptr;
}

SweepResult run_sweep(const SweepGrid& grid, const SweepProgress& progress) {
  grid.run.validate();
  if (grid.seeds.empty()) throw ConfigError("the sweep needs at least one seed");
  const double default_alpha = grid.run.plan.alpha;

  // rows[config index][seed index]
  std::vector<std::vector<SweepRow>> alpha_rows(grid.alphas.size());
  std::vector<std::vector<SweepRow>> beta_rows(grid.betas.size());
  auto emit = [&](std::vector<SweepRow>& bucket, SweepRow row) {
    if (progress) progress(row);
    bucket.push_back(std::move(row));
  };

  for (std::uint64_t seed : grid.seeds) {
    SynthConfig data_cfg = grid.data;
    data_cfg.seed = seed;
    data_cfg.height = grid.run.plan.height;
    data_cfg.width = grid.run.plan.width;
    const Dataset dataset = synthesize_dataset(data_cfg);

    StagePlan weak = grid.run.plan;
    weak.stage = Stage::kWeak;
    weak.seed = seed;
    weak.epochs = grid.weak_epochs;

    std::optional<SegModel> default_teacher;
    for (std::size_t a = 0; a < grid.alphas.size(); ++a) {
      StagePlan plan = weak;
      plan.alpha = grid.alphas[a];
      SegModel teacher = train_weak_stage(dataset, grid.run.model, plan, grid.run.sgd);
      SweepRow row{"alpha", plan.alpha, std::nullopt, std::nullopt, seed};
      row.is_default = plan.alpha == default_alpha;
      fill_scores(row, evaluate(teacher, dataset, Split::kTest));
      emit(alpha_rows[a], row);
      if (row.is_default && !default_teacher) default_teacher.emplace(std::move(teacher));
    }
    if (grid.betas.empty()) continue;
    if (!default_teacher) {
      default_teacher.emplace(train_weak_stage(dataset, grid.run.model, weak, grid.run.sgd));
    }
    const PseudoLabelCache cache = generate_pseudo_labels(*default_teacher, dataset);
    for (std::size_t b = 0; b < grid.betas.size(); ++b) {
      StagePlan plan = weak;
      plan.stage = Stage::kSemi;
      plan.epochs = grid.semi_epochs;
      plan.beta1 = grid.betas[b].first;
      plan.beta2 = grid.betas[b].second;
      SegModel student = train_semi_stage(dataset, cache, grid.run.model, plan, grid.run.sgd);
      SweepRow row{"beta", default_alpha, plan.beta1, plan.beta2, seed};
      row.is_default = plan.beta1 == grid.run.plan.beta1 && plan.beta2 == grid.run.plan.beta2;
      fill_scores(row, evaluate(student, dataset, Split::kTest));
      emit(beta_rows[b], row);
    }
  }

  SweepResult result;
  for (auto* group : {&alpha_rows, &beta_rows}) {
    for (const std::vector<SweepRow>& per_seed : *group) {
      if (per_seed.empty()) continue;
      result.rows.insert(result.rows.end(), per_seed.begin(), per_seed.end());
      result.rows.push_back(median_row(per_seed));
    }
  }
  return result;
}

SweepGrid parse_sweep_grid(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw FormatError(std::string("sweep grid is not valid JSON: ") + ex.what());
  }
  if (!doc.is_object()) throw ConfigError("sweep grid must be a JSON object");
  SweepGrid grid;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "alphas") {
        grid.alphas = value.get<std::vector<double>>();
      } else if (key == "betas") {
        grid.betas.clear();
        for (const json& pair : value) {
          if (!pair.is_array() || pair.size() != 2) {
            throw ConfigError("each betas entry must be [beta1, beta2]");
          }
          grid.betas.emplace_back(pair[0].get<double>(), pair[1].get<double>());
        }
      } else if (key == "seeds") {
        grid.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "n_train") {
        grid.data.n_train = value.get<std::size_t>();
      } else if (key == "n_test") {
        grid.data.n_test = value.get<std::size_t>();
      } else if (key == "labeled_fraction") {
        grid.data.labeled_fraction = value.get<double>();
      } else if (key == "weak_epochs") {
        grid.weak_epochs = value.get<std::size_t>();
      } else if (key == "semi_epochs") {
        grid.semi_epochs = value.get<std::size_t>();
      } else if (key == "config") {
        grid.run = parse_run_config(value.dump(), grid.run);
      } else {
        throw ConfigError("unknown sweep grid key '" + key + "'");
      }
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("sweep grid has a value of the wrong type: ") + ex.what());
  }
  return grid;
}

SweepGrid load_sweep_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read sweep grid " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_sweep_grid(ss.str());
}

}  // namespace wsds
