#include "multicos/ablation.hpp"

#include "multicos/errors.hpp"

namespace multicos {

namespace {

RunConfig fusion(const RunConfig& base, bool ffm, bool ssfm, bool lsfm) {
  RunConfig c = base;
  c.rgb_only = false;
  c.enable_ffm = ffm;
  c.enable_ssfm = ssfm;
  c.enable_lsfm = lsfm;
  return c;
}

}  // namespace

std::vector<AblationRow> ablation_rows(int table, const RunConfig& base) {
  std::vector<AblationRow> rows;
  switch (table) {
    case 5: {
      RunConfig rgb = base;
      rgb.rgb_only = true;
      rgb.enable_ckler = false;
      rgb.enable_injection = false;
      rgb.aux_source = "real";
      rows.push_back({"rgb_only", rgb});
      rows.push_back({"+E_u", fusion(base, false, false, false)});
      rows.push_back({"+SSFM", fusion(base, false, true, false)});
      rows.push_back({"+LSFM", fusion(base, false, false, true)});
      rows.push_back({"+SSFM+LSFM", fusion(base, false, true, true)});
      rows.push_back({"+FFM+LSFM", fusion(base, true, false, true)});
      rows.push_back({"+FFM+SSFM", fusion(base, true, true, false)});
      rows.push_back({"full", fusion(base, true, true, true)});
      break;
    }
    case 6: {
      RunConfig c = fusion(base, true, true, true);
      c.enable_gate = false;
      rows.push_back({"-g_w", c});
      c = fusion(base, true, true, true);
      c.enable_ssm = false;
      rows.push_back({"-SSM", c});
      c = fusion(base, true, true, true);
      c.enable_cssm = false;
      rows.push_back({"-CSSM", c});
      rows.push_back({"full", fusion(base, true, true, true)});
      break;
    }
    case 8: {
      RunConfig c = fusion(base, true, true, true);
      c.enable_ckler = true;
      c.enable_injection = false;
      c.aux_source = "pseudo";
      rows.push_back({"w/o Know-Vec", c});
      c.enable_injection = true;
      c.aux_source = "zero";
      rows.push_back({"Only Know-Vec", c});
      c.aux_source = "pseudo";
      rows.push_back({"full", c});
      break;
    }
    default: throw ConfigError("ablation table must be 5, 6 or 8, got " + std::to_string(table));
  }
  for (const auto& r : rows) validate(r.config);
  return rows;
}

RowResult run_row(const AblationRow& row, std::shared_ptr<const TrainData> data,
                  const std::function<void(int64_t, const StepLosses&)>& log) {
  if (!data) data = std::make_shared<const TrainData>(load_data(row.config));
  RowResult r{row.name, row.config, {}, {}};
  Trainer t(row.config, data);
  t.run(row.config.steps, [&](int64_t step, const StepLosses& s) {
    r.curve.push_back(s);
    if (log) log(step, s);
  });
  r.test = t.evaluate(data->test, row.name);
  return r;
}

}  // namespace multicos
