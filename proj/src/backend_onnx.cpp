#include "sentinel/backend.hpp"

#ifdef SENTINEL_WITH_ONNXRUNTIME
#include <onnxruntime_cxx_api.h>
#endif

namespace sentinel {

#ifdef SENTINEL_WITH_ONNXRUNTIME

namespace {

class OnnxBackend final : public InferenceBackend {
 public:
  OnnxBackend(const std::filesystem::path& model_path, const nlohmann::json& options, std::int64_t pad_id)
      : env_(ORT_LOGGING_LEVEL_WARNING, "sentinel"), pad_id_(pad_id) {
    Ort::SessionOptions so;
    so.SetIntraOpNumThreads(options.value("intra_op_threads", 0));
    so.SetGraphOptimizationLevel(GraphOptimizationLevel::ORT_ENABLE_ALL);
    try {
      session_ = std::make_unique<Ort::Session>(env_, model_path.c_str(), so);
    } catch (const Ort::Exception& e) {
      throw Error("invalid_bundle", "cannot load " + model_path.string() + ": " + e.what());
    }
    ids_name_ = options.value("input_ids_name", std::string("input_ids"));
    mask_name_ = options.value("attention_mask_name", std::string("attention_mask"));
    Ort::AllocatorWithDefaultOptions alloc;
    logits_name_ = options.value("output_name", std::string(session_->GetOutputNameAllocated(0, alloc).get()));
  }

  LogitMatrixd infer(std::span<const TokenSequence> batch) override {
    std::size_t width = 1;
    for (const auto& s : batch) width = std::max(width, s.length());
    const auto n = static_cast<std::int64_t>(batch.size());
    std::vector<std::int64_t> ids(batch.size() * width, pad_id_);
    std::vector<std::int64_t> mask(batch.size() * width, 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::copy(batch[i].ids.begin(), batch[i].ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(i * width));
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(i * width), batch[i].length(), 1);
    }
    const std::array<std::int64_t, 2> shape{n, static_cast<std::int64_t>(width)};
    auto mem = Ort::MemoryInfo::CreateCpu(OrtArenaAllocator, OrtMemTypeDefault);
    std::array<Ort::Value, 2> inputs{
        Ort::Value::CreateTensor<std::int64_t>(mem, ids.data(), ids.size(), shape.data(), shape.size()),
        Ort::Value::CreateTensor<std::int64_t>(mem, mask.data(), mask.size(), shape.data(), shape.size())};
    const std::array<const char*, 2> in_names{ids_name_.c_str(), mask_name_.c_str()};
    const char* out_name = logits_name_.c_str();
    try {
      auto outputs = session_->Run(Ort::RunOptions{nullptr}, in_names.data(), inputs.data(), inputs.size(),
                                   &out_name, 1);
      const auto info = outputs[0].GetTensorTypeAndShapeInfo();
      const auto out_shape = info.GetShape();
      if (out_shape.size() != 2 || out_shape[0] != n || out_shape[1] != 2) {
        throw BackendError("onnx backend: expected logits of shape (batch, 2)");
      }
      const float* data = outputs[0].GetTensorData<float>();
      LogitMatrixd out(n, 2);
      for (std::int64_t i = 0; i < n; ++i) {
        out(i, 0) = data[i * 2];
        out(i, 1) = data[i * 2 + 1];
      }
      return out;
    } catch (const Ort::Exception& e) {
      throw BackendError(std::string("onnx backend: ") + e.what());
    }
  }

  std::string kind() const override { return "onnx"; }

 private:
  Ort::Env env_;
  std::unique_ptr<Ort::Session> session_;
  std::int64_t pad_id_;
  std::string ids_name_, mask_name_, logits_name_;
};

}  // namespace

bool onnx_runtime_available() noexcept { return true; }

std::unique_ptr<InferenceBackend> make_onnx_backend(const std::filesystem::path& model_path,
                                                    const nlohmann::json& options, std::int64_t pad_id) {
  return std::make_unique<OnnxBackend>(model_path, options, pad_id);
}

#else

bool onnx_runtime_available() noexcept { return false; }

std::unique_ptr<InferenceBackend> make_onnx_backend(const std::filesystem::path& model_path,
                                                    const nlohmann::json&, std::int64_t) {
  throw Error("backend_unavailable", "cannot run " + model_path.string() +
                                         ": this build has no onnxruntime support "
                                         "(configure with -DSENTINEL_ONNXRUNTIME_ROOT=...)");
}

#endif

}  // namespace sentinel
