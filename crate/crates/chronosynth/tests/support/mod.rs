pub mod fsim_oracle;
