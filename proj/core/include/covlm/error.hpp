// Copyright 2026 The CoVLM Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COVLM_ERROR_HPP_
#define COVLM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace covlm {

// Base of every exception thrown by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration or arguments. The CLI maps this to
// exit code 2; every other Error maps to 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace covlm

#endif  // COVLM_ERROR_HPP_
