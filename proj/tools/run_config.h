// Copyright 2026 The LPNAS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef LPNAS_TOOLS_RUN_CONFIG_H_
#define LPNAS_TOOLS_RUN_CONFIG_H_

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lpnas/data.h"
#include "lpnas/device.h"
#include "lpnas/genotype.h"
#include "lpnas/precision.h"
#include "lpnas/search.h"
#include "lpnas/trainer.h"

namespace lpnas::cli {

struct RunConfig {
  SyntheticConfig data;
  GaConfig ga;
  FitnessConfig fitness;
  TrainConfig train;
  PrecisionConfig precision;
  SearchSpaceConfig space;
  std::string device_profile;  // empty: built-in default profile
  std::string branch = "ptq";
};

enum class Group { kData, kGa, kFitness, kTrain, kPrecision, kSpace, kDevice, kBranch };

struct ConfigKey {
  std::string key;
  Group group;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Every resolvable key, in manifest order.
const std::vector<ConfigKey>& ConfigKeys();
const ConfigKey* FindKey(const std::string& key);

// UTF-8 key=value lines, '#' comments. Throws IoError when unreadable and
// InvalidArgument on malformed lines.
std::map<std::string, std::string> ReadKeyValueFile(const std::filesystem::path& path);

// Sets one key; throws InvalidArgument naming the key on a bad value.
void ApplyValue(RunConfig& config, const std::string& key, const std::string& value);

// key=value lines for the given groups, in ConfigKeys() order.
std::string RenderManifest(const RunConfig& config, const std::vector<Group>& groups);

}  // namespace lpnas::cli

#endif  // LPNAS_TOOLS_RUN_CONFIG_H_
