/* Copyright 2026 The dishwx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dishwx {

enum class ErrorCode {
  // imaging-core
  UnreadableFile,
  UnsupportedFormat,
  InvalidDimensions,
  NonPositiveScale,
  InvalidImage,
  // segmenter
  BackendNotTrainable,
  EmptyDataset,
  CheckpointMissing,
  NoDetection,
  DimensionMismatch,
  EmptyMask,
  AnnotationMissing,
  MalformedAnnotation,
  BackendFailure,
  // data-forge
  InsufficientCutouts,
  CutoutTooLarge,
  MissingConditionPool,
  IndivisibleSize,
  MalformedManifest,
  // tl-classifier
  InvalidClassCount,
  MissingPretrainedWeights,
  MalformedWeights,
  InvalidProbability,
  EmptyManifest,
  UnpreprocessedInput,
  ModelNotLoaded,
  InvalidConfig,
  // eval-harness
  UnknownClassLabel,
  EmptyInput,
  UndefinedAP,
  NoDefinedAP,
  InvalidArchitectureParams,
  InsufficientSamples,
  MalformedImport,
  // complexity-profiler
  UnknownLayerType,
  InconsistentInputSize,
  InconsistentBatchSize,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::InvalidDimensions: return "InvalidDimensions";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::InvalidImage: return "InvalidImage";
    case ErrorCode::BackendNotTrainable: return "BackendNotTrainable";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::CheckpointMissing: return "CheckpointMissing";
    case ErrorCode::NoDetection: return "NoDetection";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::AnnotationMissing: return "AnnotationMissing";
    case ErrorCode::MalformedAnnotation: return "MalformedAnnotation";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::InsufficientCutouts: return "InsufficientCutouts";
    case ErrorCode::CutoutTooLarge: return "CutoutTooLarge";
    case ErrorCode::MissingConditionPool: return "MissingConditionPool";
    case ErrorCode::IndivisibleSize: return "IndivisibleSize";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::InvalidClassCount: return "InvalidClassCount";
    case ErrorCode::MissingPretrainedWeights: return "MissingPretrainedWeights";
    case ErrorCode::MalformedWeights: return "MalformedWeights";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::UnpreprocessedInput: return "UnpreprocessedInput";
    case ErrorCode::ModelNotLoaded: return "ModelNotLoaded";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownClassLabel: return "UnknownClassLabel";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UndefinedAP: return "UndefinedAP";
    case ErrorCode::NoDefinedAP: return "NoDefinedAP";
    case ErrorCode::InvalidArchitectureParams: return "InvalidArchitectureParams";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::MalformedImport: return "MalformedImport";
    case ErrorCode::UnknownLayerType: return "UnknownLayerType";
    case ErrorCode::InconsistentInputSize: return "InconsistentInputSize";
    case ErrorCode::InconsistentBatchSize: return "InconsistentBatchSize";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception. `code()` names
/// the originating condition so the CLI can report it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace dishwx
