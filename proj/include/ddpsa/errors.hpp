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

#include <stdexcept>
#include <string>

namespace ddpsa {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched moduli, non-prime modulus, insufficient headroom.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

class InvalidParameterError : public Error {
 public:
  using Error::Error;
};

// A real value does not fit the codec's encodable range.
class EncodingOverflowError : public Error {
 public:
  using Error::Error;
};

// Reconstruction attempted without every server's share.
class IncompleteSharesetError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A role received a message for a round it is not expecting.
class ProtocolDesyncError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// A round cannot complete because at least one input never arrived.
class IncompleteRoundError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// The reconstructed aggregate lies outside the configured magnitude bound,
// which means the field sum wrapped around p.
class WraparoundFaultError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class DegenerateLabelsError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

// Malformed frame or broken socket.
class ConnectionFaultError : public Error {
 public:
  using Error::Error;
};

// Frame cannot be produced (payload too large for the length field).
class EncodingError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperationError : public Error {
 public:
  using Error::Error;
};

// Invalid command-line flag combination.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddpsa
