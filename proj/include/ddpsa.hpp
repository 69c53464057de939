/*
 * Copyright 2026 The ddpsa Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#pragma once

#include "ddpsa/errors.hpp"
#include "ddpsa/finite_field.hpp"
#include "ddpsa/gradient.hpp"
#include "ddpsa/harness.hpp"
#include "ddpsa/learning.hpp"
#include "ddpsa/messages.hpp"
#include "ddpsa/privacy.hpp"
#include "ddpsa/protocol.hpp"
#include "ddpsa/random.hpp"
#include "ddpsa/secret_sharing.hpp"
#include "ddpsa/transport.hpp"
#include "ddpsa/wire.hpp"
