#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "stnlab/affine_pose.hpp"
#include "stnlab/arch.hpp"
#include "stnlab/datagen.hpp"
#include "stnlab/equi_audit.hpp"
#include "stnlab/error.hpp"
#include "stnlab/network.hpp"
#include "stnlab/trainer.hpp"

namespace py = pybind11;
using namespace stnlab;

namespace {

AffineTransform to_affine(const std::array<double, 6>& m) { return AffineTransform{m, Frame::GridSpace}; }

py::array_t<float> images_array(const LabeledImageSet& s) {
  py::array_t<float> a({s.size(), s.height(), s.width()});
  std::memcpy(a.mutable_data(), s.images.data(), s.images.size() * sizeof(float));
  return a;
}

TransformGroupElement group_element(const std::string& group, double magnitude, long dy) {
  switch (parse_group_kind(group)) {
    case GroupKind::TranslationInt: return TransformGroupElement::translation(static_cast<long>(magnitude), dy);
    case GroupKind::Rotation: return TransformGroupElement::rotation(magnitude);
    case GroupKind::UniformScale: return TransformGroupElement::uniform_scale(magnitude);
    default: throw ValueError("use translation, rotation or scale");
  }
}

}  // namespace

PYBIND11_MODULE(_stnlab, m) {
  m.doc() = "Spatial transformer network lab: architectures, pose measures, data and audits.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  // Registered later, so tried first: bad arguments surface as ValueError.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValueError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("spec_names", &builtin_spec_names, "Names of the built-in architectures.");
  m.def("param_count", [](const std::string& name) { return count_params(builtin_spec(name)); },
        py::arg("spec"), "Trainable parameter count of a built-in architecture.");
  m.def("spec_json", [](const std::string& name) { return spec_to_json(builtin_spec(name)); }, py::arg("spec"));
  m.def("effective_pixel_scale", [](const std::string& name) { return effective_pixel_scale(builtin_spec(name)); },
        py::arg("spec"));

  m.def("fit_similarity", [](const std::array<double, 6>& a) {
          const SimilarityFit f = fit_similarity(to_affine(a));
          return py::make_tuple(f.scale, f.degrees);
        }, py::arg("matrix"), "Closest scaled rotation to a 2x3 matrix: (scale, degrees).");
  m.def("compose", [](const std::array<double, 6>& a, const std::array<double, 6>& b) {
          return compose(to_affine(a), to_affine(b)).m;
        });
  m.def("invert", [](const std::array<double, 6>& a) { return invert(to_affine(a)).m; });

  m.def("synthesize", [](const std::string& variant, std::size_t count, std::uint64_t seed) {
          const MnistFiles f = locate_mnist();
          const LabeledImageSet src = take(load_idx(f.train_images, f.train_labels), count);
          const LabeledImageSet s = synthesize(parse_variant(variant), src, seed);
          py::dict d;
          d["images"] = images_array(s);
          d["labels"] = s.labels;
          d["perturbations"] = s.perturbations;
          d["checksum"] = hex64(dataset_checksum(s));
          return d;
        }, py::arg("variant"), py::arg("count"), py::arg("seed"),
        "Perturbed copies of the first `count` training digits.");

  m.def("audit", [](const std::string& group, double magnitude, const std::string& extractor,
                    std::uint64_t seed, std::size_t size) {
          const TransformGroupElement h = group_element(group, magnitude, 0);
          FeatureExtractor ex;
          Tensor<double> image;
          if (extractor == "random") {
            ex = random_extractor(seed);
            image = random_integer_image(seed, size, size);
          } else if (extractor == "mirrored-pair") {
            ex = mirrored_pair_extractor(5, seed + 1);
            image = random_integer_image(seed, size, size);
          } else if (extractor == "isotropic") {
            ex = isotropic_extractor({1.0, 2.0});
            image = blob_image(seed, size, size, 12, 12.0);
          } else {
            throw ValueError("unknown extractor: " + extractor);
          }
          const AuditReport r = alignment_residual(ex, image, h);
          py::dict d;
          d["residual_same"] = r.residual_same;
          d["residual_perm"] = r.residual_perm;
          d["permutation"] = r.permutation;
          d["interior"] = r.interior;
          d["overlap"] = receptive_field_overlap(h, static_cast<double>(ex.receptive_field().support));
          return d;
        }, py::arg("group"), py::arg("magnitude"), py::arg("extractor") = "random", py::arg("seed") = 0,
        py::arg("size") = 48, "Feature alignment residual of a fixed extractor under one transformation.");
  m.def("overlap", [](const std::string& group, double magnitude, double support) {
          return receptive_field_overlap(group_element(group, magnitude, 0), support);
        }, py::arg("group"), py::arg("magnitude"), py::arg("support") = 8.0);

  m.def("identity_pose_spread", [](std::size_t test_limit, std::uint64_t eval_seed) {
          const MnistFiles f = locate_mnist();
          const LabeledImageSet train = load_idx(f.train_images, f.train_labels);
          const LabeledImageSet test = take(load_idx(f.test_images, f.test_labels), test_limit);
          const Network<float> net(builtin_spec("mnist-r/stn-c0"), 1);
          const Normalization norm = training_normalization(train, Variant::R, 1);
          const EvalReport r = evaluate(net, make_eval_set(test, Variant::R, eval_seed, 10, norm));
          return r.pose ? r.pose->average : 0.0;
        }, py::arg("test_limit") = 1000, py::arg("eval_seed") = kDefaultEvalSeed,
        "Rotation pose spread of an untrained input transformer on rotated test digits.");
}
