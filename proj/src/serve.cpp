#include "airr/serve.hpp"

#include <chrono>

#include <httplib.h>

#include "airr/errors.hpp"
#include "airr/image_io.hpp"
#include "airr/trainer.hpp"

namespace airr {
namespace {

using nlohmann::json;

// Maps to a 4xx/5xx response with a {code, message} body.
struct HttpError : std::runtime_error {
  HttpError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, json{{"code", code}, {"message", message}}.dump()};
}

HttpResponse ok(const json& body) { return {200, body.dump()}; }

torch::Tensor decode_field(const json& request, const char* field, int channels, int64_t size) {
  if (!request.contains(field) || !request[field].is_string()) {
    throw HttpError(400, "bad_request", std::string("missing or non-string field '") + field + "'");
  }
  torch::Tensor img;
  try {
    const auto bytes = base64_decode(request[field].get<std::string>());
    img = decode_png(bytes, channels);
  } catch (const UserError& e) {
    throw HttpError(400, "malformed_image", std::string(field) + ": " + e.what());
  }
  if (img.size(1) != size || img.size(2) != size) {
    throw HttpError(400, "malformed_image", std::string(field) + ": expected " + std::to_string(size) + "x" +
                                                std::to_string(size) + ", got " + std::to_string(img.size(2)) +
                                                "x" + std::to_string(img.size(1)));
  }
  return img;
}

struct Inputs {
  torch::Tensor image;  // [1,3,S,S]
  torch::Tensor mask;   // [1,1,S,S]
  torch::Tensor sources;
};

Inputs parse_inputs(const json& request, const AirrModel& model) {
  const auto size = model->arch().image_size;
  Inputs in;
  in.image = to_unit_float(decode_field(request, "image", 3, size)).unsqueeze(0);
  if (request.contains("mask") && !request["mask"].is_null()) {
    in.mask = decode_field(request, "mask", 1, size).gt(127).to(torch::kFloat32).unsqueeze(0);
  } else {
    in.mask = torch::ones({1, 1, size, size});
  }
  if (request.contains("source_attributes") && !request["source_attributes"].is_null()) {
    const auto& src = request["source_attributes"];
    const auto& schema = *model->schema();
    if (!src.is_object() || src.size() != schema.num_categories()) {
      throw HttpError(400, "bad_request", "source_attributes must name every category exactly once");
    }
    in.sources = torch::zeros({1, static_cast<int64_t>(schema.num_categories())}, torch::kInt64);
    for (const auto& [name, value] : src.items()) {
      if (!value.is_string()) throw HttpError(400, "bad_request", "source_attributes values must be strings");
      const auto c = schema.category_index(name);
      in.sources[0][static_cast<int64_t>(c)] = schema.value_index(c, value.get<std::string>());
    }
  }
  return in;
}

json predicted_attributes(Judge& judge, const SchemaPtr& schema, const torch::Tensor& images) {
  const auto probs = eval::judge_probabilities(judge, images);
  json out = json::object();
  for (std::size_t c = 0; c < schema->num_categories(); ++c) {
    const auto p = probs[c][0];
    const auto v = p.argmax().item<int64_t>();
    out[schema->category(c).name] = {{"value", schema->category(c).values[static_cast<std::size_t>(v)]},
                                     {"confidence", p[v].item<double>()}};
  }
  return out;
}

std::string encode_image(const torch::Tensor& unit) {
  const auto png = encode_png(to_u8(unit[0]));
  return base64_encode(png);
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw HttpError(400, "bad_request", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw HttpError(400, "bad_request", std::string("invalid JSON: ") + e.what());
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void InferenceService::load(const std::filesystem::path& checkpoint, const std::filesystem::path& judge_dir) {
  auto judge = eval::load_judge(judge_dir);
  const auto judge_schema = AttributeSchema::from_json(judge.manifest.at("schema"));
  auto ckpt = load_model_checkpoint(checkpoint, judge_schema);
  install(ckpt.model, judge.judge, ckpt.manifest.value("parameter_hash", ""),
          judge.manifest.value("parameter_hash", ""));
}

void InferenceService::install(AirrModel model, Judge judge, std::string checkpoint_hash, std::string judge_hash) {
  if (loaded()) throw ContractError("InferenceService: already loaded");
  model->eval();
  for (auto& p : model->parameters()) p.set_requires_grad(false);
  judge->freeze();
  auto s = std::make_shared<Loaded>();
  s->model = std::move(model);
  s->judge = std::move(judge);
  s->checkpoint_hash = std::move(checkpoint_hash);
  s->judge_hash = std::move(judge_hash);
  state_ = std::move(s);
  loaded_.store(true, std::memory_order_release);
}

std::int64_t InferenceService::decode_calls() const { return loaded() ? state_->model->decode_calls() : 0; }

HttpResponse InferenceService::handle(const std::string& method, const std::string& path,
                                      const std::string& body) const {
  try {
    const bool get = method == "GET";
    const bool post = method == "POST";
    if (path == "/v1/healthz" && get) return healthz();
    const bool known = path == "/v1/schema" || path == "/v1/manipulate" || path == "/v1/reconstruct" ||
                       path == "/v1/diagnose" || path == "/v1/healthz";
    if (!known) return error_response(404, "not_found", "no such endpoint: " + path);
    const bool want_get = path == "/v1/schema";
    if ((want_get && !get) || (!want_get && !post)) {
      return error_response(405, "method_not_allowed", method + " not allowed on " + path);
    }
    if (!loaded()) return error_response(503, "not_loaded", "model is still loading");
    if (path == "/v1/schema") return schema();
    const auto request = parse_body(body);
    if (path == "/v1/manipulate") return manipulate(request);
    if (path == "/v1/reconstruct") return reconstruct(request);
    return diagnose(request);
  } catch (const HttpError& e) {
    return error_response(e.status, e.code, e.what());
  } catch (const UserError& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

HttpResponse InferenceService::schema() const { return ok(state_->model->schema()->to_json()); }

HttpResponse InferenceService::healthz() const {
  if (!loaded()) return {503, json{{"status", "loading"}, {"ckpt_hash", nullptr}, {"judge_hash", nullptr}}.dump()};
  return ok({{"status", "ok"}, {"ckpt_hash", state_->checkpoint_hash}, {"judge_hash", state_->judge_hash}});
}

HttpResponse InferenceService::manipulate(const json& request) const {
  const auto start = std::chrono::steady_clock::now();
  auto& model = state_->model;
  const auto& schema = *model->schema();
  const auto n = static_cast<int64_t>(schema.num_categories());

  auto targets = torch::zeros({1, n}, torch::kInt64);
  auto strengths = torch::zeros({1, n}, torch::kFloat32);
  std::vector<bool> seen(schema.num_categories(), false);
  const auto edits = request.value("edits", json::array());
  if (!edits.is_array()) throw HttpError(400, "bad_request", "edits must be a list");
  for (const auto& e : edits) {
    if (!e.is_object() || !e.contains("category") || !e.contains("value")) {
      throw HttpError(400, "bad_request", "each edit needs category and value");
    }
    const auto c = schema.category_index(e.at("category").get<std::string>());
    if (seen[c]) throw HttpError(400, "bad_request", "category edited twice: " + schema.category(c).name);
    seen[c] = true;
    const double s = e.value("strength", 1.0);
    if (!(s >= 0.0 && s <= 1.0)) throw HttpError(400, "bad_request", "strength must lie in [0, 1]");
    targets[0][static_cast<int64_t>(c)] = schema.value_index(c, e.at("value").get<std::string>());
    strengths[0][static_cast<int64_t>(c)] = s;
  }

  const auto in = parse_inputs(request, model);
  const auto out = model->edit(in.image, in.mask, targets, strengths, in.sources);
  return ok({{"image", encode_image(out.images)},
             {"predicted_attributes", predicted_attributes(state_->judge, model->schema(), out.images)},
             {"latency_ms", elapsed_ms(start)}});
}

HttpResponse InferenceService::reconstruct(const json& request) const {
  const auto start = std::chrono::steady_clock::now();
  auto& model = state_->model;
  const auto in = parse_inputs(request, model);
  const auto out = model->reconstruct(in.image, in.mask, in.sources);
  return ok({{"image", encode_image(out.images)},
             {"predicted_attributes", predicted_attributes(state_->judge, model->schema(), out.images)},
             {"latency_ms", elapsed_ms(start)}});
}

HttpResponse InferenceService::diagnose(const json& request) const {
  const auto start = std::chrono::steady_clock::now();
  auto& model = state_->model;
  const auto in = parse_inputs(request, model);
  const auto images = model->diagnose(in.image, in.mask);
  return ok({{"image", encode_image(images)},
             {"predicted_attributes", predicted_attributes(state_->judge, model->schema(), images)},
             {"latency_ms", elapsed_ms(start)}});
}

void InferenceService::bind(httplib::Server& server) const {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, r.content_type);
  };
  for (const char* p : {"/v1/schema", "/v1/healthz"}) server.Get(p, route);
  for (const char* p : {"/v1/manipulate", "/v1/reconstruct", "/v1/diagnose"}) server.Post(p, route);
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace airr
