namespace hmpc {}
