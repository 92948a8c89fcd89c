"""Software-simulated LoRa radio-frequency-fingerprint identification."""
