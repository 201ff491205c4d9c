#include <json.hpp>

#include "tscodec/error.hpp"
#include "tscodec/rdp_oracle.hpp"

namespace tscodec::rdp {

namespace {

using Json = nlohmann::json;

Json law_json(const DiscreteLaw& law) { return {{"values", law.values}, {"pmf", law.pmf}}; }

DiscreteLaw law_from(const Json& j, const char* what) {
  if (!j.is_object() || !j.contains("values") || !j.contains("pmf")) {
    throw InvalidArgument(std::string(what) + " needs 'values' and 'pmf' arrays");
  }
  try {
    return make_law(j.at("values").get<std::vector<double>>(), j.at("pmf").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string instance_json(const Instance& inst) {
  return Json{{"source", law_json(inst.source)}, {"noise", law_json(inst.noise)}, {"codewords", inst.codewords}}
      .dump();
}

Instance parse_instance_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("invalid instance JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("source") || !j.contains("codewords")) {
    throw InvalidArgument("instance needs 'source' and 'codewords'");
  }
  Instance inst;
  inst.source = law_from(j.at("source"), "source");
  inst.noise = j.contains("noise") ? law_from(j.at("noise"), "noise") : DiscreteLaw{{0.0}, {1.0}};
  if (!j.at("codewords").is_number_integer()) throw InvalidArgument("codewords must be an integer");
  inst.codewords = j.at("codewords").get<int>();
  inst.validate();
  return inst;
}

std::string sweep_report_json(const SweepResult& result) {
  Json rows = Json::array();
  for (const auto& r : result.instances) {
    rows.push_back({{"source", law_json(r.instance.source)},
                    {"noise", law_json(r.instance.noise)},
                    {"codewords", r.instance.codewords},
                    {"encoders", r.encoders},
                    {"d_inf", r.d_inf},
                    {"d_0", r.d_0},
                    {"d_0_of_mmse_encoders", r.d_0_of_mmse},
                    {"d_ps", r.d_ps},
                    {"transfer_holds", r.transfer_holds},
                    {"witnesses", r.witnesses},
                    {"max_decomposition_residual", r.max_decomposition_residual},
                    {"endpoints_hold", r.endpoints_hold},
                    {"max_law_residual", r.max_law_residual}});
  }
  Json out{{"instances", result.instances.size()},
           {"transfer_failures", result.transfer_failures},
           {"decomposition_failures", result.decomposition_failures},
           {"endpoint_failures", result.endpoint_failures},
           {"passed", result.passed()},
           {"seconds", result.seconds},
           {"results", rows}};
  return out.dump(1);
}

}  // namespace tscodec::rdp
